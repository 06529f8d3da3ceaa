/* case u6 */
int main(void) {
  return nope;
}
