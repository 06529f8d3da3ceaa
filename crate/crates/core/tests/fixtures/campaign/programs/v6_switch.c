#include <stdio.h>
int main(void) {
  unsigned hash = 2166136261u;
  for (int i = 0; i < 64; i++) {
    switch (i % 4) {
    case 0: hash ^= (unsigned)i; break;
    case 1: hash *= 16777619u; break;
    default: hash += 7u;
    }
  }
  printf("%u\n", hash);
  return 0;
}
