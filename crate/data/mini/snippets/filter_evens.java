public static List<Integer> filterEvens(List<Integer> values) {
    List<Integer> result = new ArrayList<>();
    for (int i = 0; i < values.size(); i++) {
        int v = values.get(i);
        if (v % 2 == 0) {
            result.add(v);
        }
    }
    return result;
}
