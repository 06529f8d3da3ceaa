#include <stdlib.h>
int main(void) {
  char *p = malloc(8);
  p[0] = 'a';
  free(p);
  return p[0];
}
