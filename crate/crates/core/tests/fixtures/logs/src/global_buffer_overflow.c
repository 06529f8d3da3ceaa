int table[4] = {1, 2, 3, 4};
int main(int argc, char **argv) {
  int *p = table;
  return p[argc + 3];
}
