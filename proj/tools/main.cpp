// SPDX-License-Identifier: Apache-2.0

#include <cstdio>

int main(int, char**) {
  std::puts("nqg: cli not wired up yet");
  return 1;
}
