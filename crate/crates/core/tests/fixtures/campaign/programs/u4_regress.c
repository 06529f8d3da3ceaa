#include <stdio.h>
/* case u4 */
int main(void) {
  int x = ;
  printf("%d\n", x);
  return 0;
}
