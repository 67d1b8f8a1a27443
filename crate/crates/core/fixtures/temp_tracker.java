class TempTracker {
    private double minSeen = Double.MAX_VALUE;
    private double maxSeen = -Double.MAX_VALUE;
    private double total = 0.0;
    private long count = 0;

    void record(double celsius) {
        if (celsius < minSeen) {
            minSeen = celsius;
        }
        if (celsius > maxSeen) {
            maxSeen = celsius;
        }
        total += celsius;
        count++;
    }

    double mean() {
        if (count == 0) {
            throw new IllegalStateException("no samples");
        }
        return total / count;
    }

    double range() {
        return maxSeen - minSeen;
    }
}
