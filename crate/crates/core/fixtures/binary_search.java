class BinarySearch {
    static int indexOf(long[] sorted, long needle) {
        int lo = 0;
        int hi = sorted.length - 1;
        while (lo <= hi) {
            int mid = lo + (hi - lo) / 2;
            if (sorted[mid] == needle) {
                return mid;
            }
            if (sorted[mid] < needle) {
                lo = mid + 1;
            } else {
                hi = mid - 1;
            }
        }
        return -1;
    }
}
