long sumSquares(List<Integer> values) {
    long total = 0;
    for (int v : values) {
        total += (long) v * v;
    }
    return total;
}
