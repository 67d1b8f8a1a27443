import java.util.ArrayList;
import java.util.List;

class CsvLine {
    static List<String> split(String line) {
        List<String> fields = new ArrayList<>();
        StringBuilder cell = new StringBuilder();
        boolean quoted = false;
        for (int i = 0; i < line.length(); i++) {
            char ch = line.charAt(i);
            if (ch == '"') {
                quoted = !quoted;
            } else if (ch == ',' && !quoted) {
                fields.add(cell.toString());
                cell.setLength(0);
            } else {
                cell.append(ch);
            }
        }
        fields.add(cell.toString());
        return fields;
    }
}
