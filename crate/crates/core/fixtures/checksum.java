class Checksum {
    static int crcish(byte[] payload) {
        int acc = 0xFFFF;
        for (byte b : payload) {
            acc ^= b & 0xFF;
            for (int bit = 0; bit < 8; bit++) {
                if ((acc & 1) != 0) {
                    acc = (acc >>> 1) ^ 0xA001;
                } else {
                    acc = acc >>> 1;
                }
            }
        }
        return acc;
    }
}
