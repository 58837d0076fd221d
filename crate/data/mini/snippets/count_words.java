static int countWords(String text, char sep) {
    int count = 0;
    boolean inWord = false;
    for (char c : text.toCharArray()) {
        if (c == sep) {
            inWord = false;
        } else if (!inWord) {
            inWord = true;
            count++;
        }
    }
    System.out.println(count);
    return count;
}
