#include <stdlib.h>
int main(void) {
  int *values = malloc(10 * sizeof(int));
  for (int i = 0; i <= 10; i++)
    values[i] = i;
  int last = values[5];
  free(values);
  return last == 5 ? 0 : 1;
}
