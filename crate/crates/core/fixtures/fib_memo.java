class FibMemo {
    private final long[] memo;

    FibMemo(int limit) {
        memo = new long[limit + 1];
    }

    long fib(int n) {
        if (n <= 1) {
            return n;
        }
        if (memo[n] != 0) {
            return memo[n];
        }
        long value = fib(n - 1) + fib(n - 2);
        memo[n] = value;
        return value;
    }
}
