void greet(String name, int times) {
    String msg = "Hello, " + name;
    for (int k = 0; k < times; k++) {
        System.out.println(msg);
    }
}
