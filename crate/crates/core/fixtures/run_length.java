class RunLength {
    static String encode(String text) {
        StringBuilder out = new StringBuilder();
        int i = 0;
        while (i < text.length()) {
            char ch = text.charAt(i);
            int run = 1;
            while (i + run < text.length() && text.charAt(i + run) == ch) {
                run++;
            }
            out.append(run);
            out.append(ch);
            i += run;
        }
        return out.toString();
    }
}
