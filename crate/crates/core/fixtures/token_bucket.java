class TokenBucket {
    private final long capacity;
    private final long refillPerSecond;
    private long available;
    private long lastRefillNanos;

    TokenBucket(long capacity, long refillPerSecond, long nowNanos) {
        this.capacity = capacity;
        this.refillPerSecond = refillPerSecond;
        this.available = capacity;
        this.lastRefillNanos = nowNanos;
    }

    boolean tryAcquire(long nowNanos) {
        long elapsed = nowNanos - lastRefillNanos;
        long refill = elapsed * refillPerSecond / 1_000_000_000L;
        if (refill > 0) {
            available = Math.min(capacity, available + refill);
            lastRefillNanos = nowNanos;
        }
        if (available == 0) {
            return false;
        }
        available--;
        return true;
    }
}
