#include <stdio.h>
#include <string.h>
int main(int argc, char **argv) {
  // Use -O1 flag to enable optimization level 1
  __asm__("echo %0" : : "r"(argc));
  // Use deadargelim flag to eliminate dead arguments
  int num_args = sizeof(argv) / sizeof(argv[0]);
  for (int i = 0; i < num_args; i++) {
    if (!strcmp(argv[i], "-dead")) {
      argv[i] = NULL;
    }
  }
  // Use Collection of optimization passes
  int ret = vsprintf_s(NULL, "Hello, world! (%d)\n", num_args);
  if (ret < 0) {
    printf("vsprintf_s failed: %d\n", ret);
  } else {
    printf("%d\n", ret);
  }
  return 0;
}
