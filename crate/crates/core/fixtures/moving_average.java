class MovingAverage {
    private final double[] window;
    private int next;
    private int filled;
    private double sum;

    MovingAverage(int size) {
        window = new double[size];
    }

    double push(double value) {
        if (filled == window.length) {
            sum -= window[next];
        } else {
            filled++;
        }
        window[next] = value;
        sum += value;
        next = (next + 1) % window.length;
        return sum / filled;
    }
}
