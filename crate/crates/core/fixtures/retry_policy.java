class RetryPolicy {
    private final int maxAttempts;
    private final long baseDelayMillis;

    RetryPolicy(int maxAttempts, long baseDelayMillis) {
        this.maxAttempts = maxAttempts;
        this.baseDelayMillis = baseDelayMillis;
    }

    long delayFor(int attempt) {
        if (attempt < 0 || attempt >= maxAttempts) {
            throw new IllegalArgumentException("attempt out of range: " + attempt);
        }
        long delay = baseDelayMillis;
        for (int i = 0; i < attempt; i++) {
            delay = delay * 2;
        }
        return delay;
    }

    boolean shouldRetry(int attempt, Exception error) {
        if (error instanceof InterruptedException) {
            return false;
        }
        return attempt + 1 < maxAttempts;
    }
}
