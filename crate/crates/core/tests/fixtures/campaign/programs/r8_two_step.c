#include <stdio.h>
/* case r8 */
int main(void) {
  int data[4] = {4, 3, 2, 1}
  int sum = 0;
  for (int i = 0; i < 4; i++)
    sum += data[i];
  printf("%d\n", sum);
  return 0;
}
