#include <stdio.h>
/* case u1 */
int main(void) {
  printf("%d\n", missing_value);
  return 0;
}
