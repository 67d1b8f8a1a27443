class Histogram {
    static int[] counts(int[] values, int buckets) {
        int[] hist = new int[buckets];
        int max = 1;
        for (int v : values) {
            if (v > max) {
                max = v;
            }
        }
        for (int v : values) {
            int slot = (int) ((long) v * buckets / (max + 1));
            hist[slot] = hist[slot] + 1;
        }
        return hist;
    }
}
