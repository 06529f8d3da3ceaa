#include <stdlib.h>
/* case u2 */
int main(void) {
  char *p = malloc(4);
  free(p);
  return p[1];
}
