int main(int argc, char **argv) {
  int a[4] = {0};
  int i = argc + 4;
  return a[i];
}
