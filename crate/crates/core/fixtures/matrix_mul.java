class MatrixMul {
    static double[][] multiply(double[][] a, double[][] b) {
        int n = a.length;
        int p = b.length;
        int m = b[0].length;
        double[][] c = new double[n][m];
        for (int i = 0; i < n; i++) {
            for (int k = 0; k < p; k++) {
                double pivot = a[i][k];
                for (int j = 0; j < m; j++) {
                    c[i][j] += pivot * b[k][j];
                }
            }
        }
        return c;
    }
}
