class MergeScan {
    static int[] merge(int[] d, int[] e) {
        int b = 0;
        int c = 0;
        int[] out = new int[d.length + e.length];
        int w = 0;
        while (b < d.length && c < e.length) {
            if (d[b] < e[c]) {
                out[w] = d[b];
                b = b + 1;
            } else {
                out[w] = e[c];
                c = c + 1;
            }
            w = w + 1;
        }
        while (b < d.length) {
            out[w] = d[b];
            b = b + 1;
            w = w + 1;
        }
        while (c < e.length) {
            out[w] = e[c];
            c = c + 1;
            w = w + 1;
        }
        return out;
    }
}
