import java.util.HashMap;
import java.util.Map;

class ConfigReader {
    static Map<String, String> parse(String body) {
        Map<String, String> values = new HashMap<>();
        for (String line : body.split("\n")) {
            String trimmed = line.trim();
            if (trimmed.isEmpty() || trimmed.startsWith("#")) {
                continue;
            }
            int eq = trimmed.indexOf('=');
            if (eq < 0) {
                throw new IllegalArgumentException("bad line: " + trimmed);
            }
            String key = trimmed.substring(0, eq).trim();
            String value = trimmed.substring(eq + 1).trim();
            values.put(key, value);
        }
        return values;
    }
}
