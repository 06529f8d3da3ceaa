#include <limits.h>
int main(int argc, char **argv) {
  int x = INT_MAX;
  x += argc;
  return x & 1;
}
