class LinkedStack {
    static class Node {
        int value;
        Node next;
    }

    private Node top;

    void push(int value) {
        Node node = new Node();
        node.value = value;
        node.next = top;
        top = node;
    }

    int pop() {
        if (top == null) {
            throw new IllegalStateException("stack underflow");
        }
        int value = top.value;
        top = top.next;
        return value;
    }

    boolean isEmpty() {
        return top == null;
    }
}
