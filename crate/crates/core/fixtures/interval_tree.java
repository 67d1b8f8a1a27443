class IntervalTree {
    static class Interval {
        final int lo;
        final int hi;

        Interval(int lo, int hi) {
            this.lo = lo;
            this.hi = hi;
        }

        boolean overlaps(Interval other) {
            return lo <= other.hi && other.lo <= hi;
        }
    }

    static int countOverlaps(Interval[] intervals, Interval probe) {
        int hits = 0;
        for (Interval candidate : intervals) {
            if (candidate.overlaps(probe)) {
                hits++;
            }
        }
        return hits;
    }
}
