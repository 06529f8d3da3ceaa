#include <stdio.h>
/* case r2 */
int main(void) {
  for (int i = 0; i < 4; i++)
    count += i;
  printf("%d\n", count);
  return 0;
}
