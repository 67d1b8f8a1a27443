class BitSet64 {
    private long bits;

    void set(int index) {
        checkIndex(index);
        bits |= 1L << index;
    }

    void clear(int index) {
        checkIndex(index);
        bits &= ~(1L << index);
    }

    boolean get(int index) {
        checkIndex(index);
        return (bits & (1L << index)) != 0;
    }

    int cardinality() {
        return Long.bitCount(bits);
    }

    private void checkIndex(int index) {
        if (index < 0 || index >= 64) {
            throw new IndexOutOfBoundsException("bit " + index);
        }
    }
}
