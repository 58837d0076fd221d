static int findIndex(String[] names, String target) {
    int i = 0;
    while (i < names.length) {
        if (names[i].equals(target)) {
            return i;
        }
        i++;
    }
    return -1;
}
