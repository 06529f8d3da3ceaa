#include <stdio.h>
struct pair { int a; long b; };
static long combine(struct pair p) { return p.a * 3L + p.b; }
int main(void) {
  struct pair items[3] = {{1, 2}, {3, 4}, {5, 6}};
  long acc = 0;
  for (int i = 0; i < 3; i++)
    acc += combine(items[i]);
  printf("%ld\n", acc);
  return 0;
}
