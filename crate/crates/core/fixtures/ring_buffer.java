class RingBuffer {
    private final int[] slots;
    private int head;
    private int tail;
    private int size;

    RingBuffer(int capacity) {
        this.slots = new int[capacity];
        this.head = 0;
        this.tail = 0;
        this.size = 0;
    }

    boolean push(int value) {
        if (size == slots.length) {
            return false;
        }
        slots[tail] = value;
        tail = (tail + 1) % slots.length;
        size = size + 1;
        return true;
    }

    int pop() {
        if (size == 0) {
            throw new IllegalStateException("empty ring");
        }
        int value = slots[head];
        head = (head + 1) % slots.length;
        size = size - 1;
        return value;
    }
}
