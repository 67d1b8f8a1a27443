import java.util.HashMap;
import java.util.Map;

class StringPool {
    private final Map<String, Integer> ids = new HashMap<>();
    private final Map<Integer, String> names = new HashMap<>();

    int intern(String name) {
        Integer known = ids.get(name);
        if (known != null) {
            return known;
        }
        int id = ids.size();
        ids.put(name, id);
        names.put(id, name);
        return id;
    }

    String resolve(int id) {
        String name = names.get(id);
        if (name == null) {
            throw new IllegalArgumentException("unknown id " + id);
        }
        return name;
    }
}
