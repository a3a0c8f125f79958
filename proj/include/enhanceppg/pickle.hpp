#pragma once

// Minimal reader for Python pickle streams (protocols 0-5, binary opcodes)
// sufficient for the dataset archives: dicts, lists, tuples, scalars,
// strings/bytes and numpy ndarrays reconstructed via
// numpy.core.multiarray._reconstruct. Anything else becomes an opaque
// object that can be carried around but not interpreted.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "binary_io.hpp"
#include "error.hpp"

namespace enhanceppg::pickle {

struct Object;
using ObjectPtr = std::shared_ptr<Object>;

struct None {};
struct Bytes {
    std::string data;
};
struct List {
    std::vector<ObjectPtr> items;
};
struct Tuple {
    std::vector<ObjectPtr> items;
};
struct Dict {
    std::vector<std::pair<ObjectPtr, ObjectPtr>> items;
};
struct Global {
    std::string module, name;
};
struct DType {
    std::string kind;  // e.g. "f8", "i4", "u1"
    char byte_order = '<';
};
struct NdArray {
    std::vector<std::size_t> shape;
    DType dtype;
    bool fortran = false;
    std::vector<double> values;  // row-major (C order) after decoding
};
struct Opaque {
    Global callable;
    std::vector<ObjectPtr> args;
    ObjectPtr state;
};

struct Object {
    std::variant<None, bool, std::int64_t, double, std::string, Bytes, List, Tuple, Dict,
                 Global, DType, NdArray, Opaque>
        value;
};

inline ObjectPtr make(auto v) {
    return std::make_shared<Object>(Object{std::move(v)});
}

/// Dict lookup by string key (str or bytes keys both match).
inline ObjectPtr find(const ObjectPtr& obj, const std::string& key) {
    const auto* d = obj ? std::get_if<Dict>(&obj->value) : nullptr;
    if (!d) return nullptr;
    for (const auto& [k, v] : d->items) {
        if (const auto* s = std::get_if<std::string>(&k->value); s && *s == key) return v;
        if (const auto* b = std::get_if<Bytes>(&k->value); b && b->data == key) return v;
    }
    return nullptr;
}

inline const NdArray* as_array(const ObjectPtr& obj) {
    return obj ? std::get_if<NdArray>(&obj->value) : nullptr;
}

namespace detail {

inline double decode_element(const char* p, const DType& dt) {
    const std::string& k = dt.kind;
    const bool swap = dt.byte_order == '>';
    auto load = [&]<class T>(T) {
        T v;
        char buf[sizeof(T)];
        std::memcpy(buf, p, sizeof(T));
        if (swap) std::reverse(buf, buf + sizeof(T));
        std::memcpy(&v, buf, sizeof(T));
        return static_cast<double>(v);
    };
    if (k == "f8") return load(double{});
    if (k == "f4") return load(float{});
    if (k == "i8") return load(std::int64_t{});
    if (k == "i4") return load(std::int32_t{});
    if (k == "i2") return load(std::int16_t{});
    if (k == "i1") return load(std::int8_t{});
    if (k == "u8") return load(std::uint64_t{});
    if (k == "u4") return load(std::uint32_t{});
    if (k == "u2") return load(std::uint16_t{});
    if (k == "u1" || k == "b1") return load(std::uint8_t{});
    throw LoadError("pickle: unsupported numpy dtype '" + k + "'");
}

inline std::size_t element_size(const DType& dt) {
    if (dt.kind.size() < 2) throw LoadError("pickle: malformed numpy dtype '" + dt.kind + "'");
    return static_cast<std::size_t>(std::stoul(dt.kind.substr(1)));
}

inline void fill_array(NdArray& arr, const std::string& raw) {
    std::size_t count = 1;
    for (auto s : arr.shape) count *= s;
    const std::size_t esize = element_size(arr.dtype);
    if (raw.size() != count * esize)
        throw LoadError("pickle: ndarray payload has " + std::to_string(raw.size()) +
                        " bytes, expected " + std::to_string(count * esize));
    arr.values.resize(count);
    if (!arr.fortran || arr.shape.size() < 2) {
        for (std::size_t i = 0; i < count; ++i)
            arr.values[i] = decode_element(raw.data() + i * esize, arr.dtype);
        return;
    }
    // Fortran order: transpose into C order.
    const std::size_t nd = arr.shape.size();
    std::vector<std::size_t> idx(nd, 0);
    for (std::size_t f = 0; f < count; ++f) {
        std::size_t c = 0;
        for (std::size_t d = 0; d < nd; ++d) c = c * arr.shape[d] + idx[d];
        arr.values[c] = decode_element(raw.data() + f * esize, arr.dtype);
        for (std::size_t d = 0; d < nd; ++d) {
            if (++idx[d] < arr.shape[d]) break;
            idx[d] = 0;
        }
    }
}

inline std::string bytes_of(const ObjectPtr& obj) {
    if (const auto* b = std::get_if<Bytes>(&obj->value)) return b->data;
    // Python 2 str decoded with latin1 arrives as unicode; map code points back to bytes.
    if (const auto* s = std::get_if<std::string>(&obj->value)) {
        std::string out;
        for (std::size_t i = 0; i < s->size();) {
            const auto c = static_cast<unsigned char>((*s)[i]);
            if (c < 0x80) {
                out.push_back(static_cast<char>(c));
                i += 1;
            } else if ((c & 0xE0) == 0xC0 && i + 1 < s->size()) {
                const auto cp = ((c & 0x1F) << 6) | (static_cast<unsigned char>((*s)[i + 1]) & 0x3F);
                if (cp > 0xFF) throw LoadError("pickle: non-latin1 code point in byte payload");
                out.push_back(static_cast<char>(cp));
                i += 2;
            } else {
                throw LoadError("pickle: non-latin1 code point in byte payload");
            }
        }
        return out;
    }
    throw LoadError("pickle: expected a bytes payload");
}

inline bool is_reconstruct(const Global& g) {
    return (g.module == "numpy.core.multiarray" || g.module == "numpy._core.multiarray") &&
           g.name == "_reconstruct";
}

inline bool is_dtype(const Global& g) { return g.module == "numpy" && g.name == "dtype"; }

inline bool is_codecs_encode(const Global& g) {
    return g.module == "_codecs" && g.name == "encode";
}

} // namespace detail

class Unpickler {
public:
    explicit Unpickler(std::span<const char> data) : r_(data, "pickle") {}

    ObjectPtr load() {
        for (;;) {
            const auto op = r_.get<std::uint8_t>();
            switch (op) {
            case 0x80: r_.get<std::uint8_t>(); break;    // PROTO
            case 0x95: r_.get<std::uint64_t>(); break;   // FRAME
            case '.': return pop();                      // STOP
            case '(': marks_.push_back(stack_.size()); break;
            case '0': pop(); break;
            case '1': pop_mark(); break;
            case '2': push(stack_.at(stack_.size() - 1)); break;
            case 'N': push(make(None{})); break;
            case 0x88: push(make(true)); break;
            case 0x89: push(make(false)); break;
            case 'J': push(make(static_cast<std::int64_t>(r_.get<std::int32_t>()))); break;
            case 'K': push(make(static_cast<std::int64_t>(r_.get<std::uint8_t>()))); break;
            case 'M': push(make(static_cast<std::int64_t>(r_.get<std::uint16_t>()))); break;
            case 0x8a: push(make(read_long(r_.get<std::uint8_t>()))); break;
            case 0x8b: push(make(read_long(r_.get<std::uint32_t>()))); break;
            case 'I': push_text_int(); break;
            case 'L': push_text_int(); break;
            case 'F': push(make(std::stod(read_line()))); break;
            case 'G': {
                auto bits = r_.get<std::uint64_t>();
                bits = __builtin_bswap64(bits);
                double d;
                std::memcpy(&d, &bits, sizeof d);
                push(make(d));
                break;
            }
            case 'T': push(make(Bytes{r_.get_string(r_.get<std::uint32_t>())})); break;
            case 'U': push(make(Bytes{r_.get_string(r_.get<std::uint8_t>())})); break;
            case 'B': push(make(Bytes{r_.get_string(r_.get<std::uint32_t>())})); break;
            case 'C': push(make(Bytes{r_.get_string(r_.get<std::uint8_t>())})); break;
            case 0x8e: push(make(Bytes{r_.get_string(r_.get<std::uint64_t>())})); break;
            case 0x96: push(make(Bytes{r_.get_string(r_.get<std::uint64_t>())})); break;
            case 'X': push(make(r_.get_string(r_.get<std::uint32_t>()))); break;
            case 0x8c: push(make(r_.get_string(r_.get<std::uint8_t>()))); break;
            case 0x8d: push(make(r_.get_string(r_.get<std::uint64_t>()))); break;
            case 'V': push(make(read_line())); break;
            case ']': push(make(List{})); break;
            case 'l': push(make(List{pop_mark()})); break;
            case 'a': {
                auto v = pop();
                list_of(top()).items.push_back(std::move(v));
                break;
            }
            case 'e': {
                auto items = pop_mark();
                auto& l = list_of(top()).items;
                l.insert(l.end(), items.begin(), items.end());
                break;
            }
            case ')': push(make(Tuple{})); break;
            case 't': push(make(Tuple{pop_mark()})); break;
            case 0x85: push_tuple(1); break;
            case 0x86: push_tuple(2); break;
            case 0x87: push_tuple(3); break;
            case '}': push(make(Dict{})); break;
            case 'd': {
                auto items = pop_mark();
                Dict d;
                for (std::size_t i = 0; i + 1 < items.size(); i += 2)
                    d.items.emplace_back(items[i], items[i + 1]);
                push(make(std::move(d)));
                break;
            }
            case 's': {
                auto v = pop();
                auto k = pop();
                dict_of(top()).items.emplace_back(std::move(k), std::move(v));
                break;
            }
            case 'u': {
                auto items = pop_mark();
                auto& d = dict_of(top());
                for (std::size_t i = 0; i + 1 < items.size(); i += 2)
                    d.items.emplace_back(items[i], items[i + 1]);
                break;
            }
            case 0x8f: push(make(List{})); break;  // EMPTY_SET, kept as a list
            case 0x90: {
                auto items = pop_mark();
                auto& l = list_of(top()).items;
                l.insert(l.end(), items.begin(), items.end());
                break;
            }
            case 0x91: push(make(List{pop_mark()})); break;
            case 'c': {
                auto module = read_line();
                auto name = read_line();
                push(make(Global{module, name}));
                break;
            }
            case 0x93: {
                auto name = pop();
                auto module = pop();
                push(make(Global{string_of(module), string_of(name)}));
                break;
            }
            case 'R': {
                auto args = pop();
                auto callable = pop();
                push(reduce(callable, args));
                break;
            }
            case 0x81: {  // NEWOBJ
                auto args = pop();
                auto cls = pop();
                push(reduce(cls, args));
                break;
            }
            case 0x92: {  // NEWOBJ_EX
                pop();
                auto args = pop();
                auto cls = pop();
                push(reduce(cls, args));
                break;
            }
            case 'b': {
                auto state = pop();
                build(top(), state);
                break;
            }
            case 'p': memo_[std::stoull(read_line())] = top(); break;
            case 'q': memo_[r_.get<std::uint8_t>()] = top(); break;
            case 'r': memo_[r_.get<std::uint32_t>()] = top(); break;
            case 0x94: memo_[memo_.size()] = top(); break;
            case 'g': push(memo_get(std::stoull(read_line()))); break;
            case 'h': push(memo_get(r_.get<std::uint8_t>())); break;
            case 'j': push(memo_get(r_.get<std::uint32_t>())); break;
            default: {
                char hex[8];
                std::snprintf(hex, sizeof hex, "0x%02x", op);
                throw LoadError(std::string("pickle: unsupported opcode ") + hex);
            }
            }
        }
    }

private:
    void push(ObjectPtr o) { stack_.push_back(std::move(o)); }
    ObjectPtr pop() {
        if (stack_.empty()) throw LoadError("pickle: stack underflow (corrupt archive)");
        auto o = std::move(stack_.back());
        stack_.pop_back();
        return o;
    }
    ObjectPtr& top() {
        if (stack_.empty()) throw LoadError("pickle: stack underflow (corrupt archive)");
        return stack_.back();
    }
    std::vector<ObjectPtr> pop_mark() {
        if (marks_.empty()) throw LoadError("pickle: mark underflow (corrupt archive)");
        const auto m = marks_.back();
        marks_.pop_back();
        std::vector<ObjectPtr> items(stack_.begin() + static_cast<std::ptrdiff_t>(m), stack_.end());
        stack_.resize(m);
        return items;
    }
    void push_tuple(std::size_t n) {
        if (stack_.size() < n) throw LoadError("pickle: stack underflow (corrupt archive)");
        std::vector<ObjectPtr> items(stack_.end() - static_cast<std::ptrdiff_t>(n), stack_.end());
        stack_.resize(stack_.size() - n);
        push(make(Tuple{std::move(items)}));
    }
    ObjectPtr memo_get(std::size_t i) {
        auto it = memo_.find(i);
        if (it == memo_.end()) throw LoadError("pickle: memo key missing (corrupt archive)");
        return it->second;
    }
    std::string read_line() {
        std::string s;
        for (char c; (c = r_.get<char>()) != '\n';) s.push_back(c);
        return s;
    }
    void push_text_int() {
        auto s = read_line();
        if (!s.empty() && s.back() == 'L') s.pop_back();
        if (s == "00") push(make(false));
        else if (s == "01") push(make(true));
        else push(make(static_cast<std::int64_t>(std::stoll(s))));
    }
    std::int64_t read_long(std::size_t n) {
        if (n > 8) throw LoadError("pickle: integer wider than 64 bits");
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < n; ++i)
            v |= static_cast<std::uint64_t>(r_.get<std::uint8_t>()) << (8 * i);
        if (n > 0 && n < 8 && (v >> (8 * n - 1)) & 1) v |= ~0ULL << (8 * n);
        return static_cast<std::int64_t>(v);
    }
    static std::string string_of(const ObjectPtr& o) {
        if (const auto* s = std::get_if<std::string>(&o->value)) return *s;
        if (const auto* b = std::get_if<Bytes>(&o->value)) return b->data;
        throw LoadError("pickle: expected a string");
    }
    static List& list_of(ObjectPtr& o) {
        if (auto* l = std::get_if<List>(&o->value)) return *l;
        throw LoadError("pickle: APPEND target is not a list");
    }
    static Dict& dict_of(ObjectPtr& o) {
        if (auto* d = std::get_if<Dict>(&o->value)) return *d;
        throw LoadError("pickle: SETITEM target is not a dict");
    }
    static const std::vector<ObjectPtr>& tuple_items(const ObjectPtr& o) {
        if (const auto* t = std::get_if<Tuple>(&o->value)) return t->items;
        throw LoadError("pickle: expected a tuple");
    }

    ObjectPtr reduce(const ObjectPtr& callable, const ObjectPtr& args) {
        const auto* g = std::get_if<Global>(&callable->value);
        if (!g) return make(Opaque{{}, tuple_items(args), nullptr});
        const auto& items = tuple_items(args);
        if (detail::is_reconstruct(*g)) return make(NdArray{});
        if (detail::is_dtype(*g)) {
            DType dt;
            dt.kind = string_of(items.at(0));
            if (!dt.kind.empty() && (dt.kind[0] == '<' || dt.kind[0] == '>' ||
                                     dt.kind[0] == '|' || dt.kind[0] == '='))
                dt.kind.erase(0, 1);
            if (dt.kind == "b1" || dt.kind == "?") dt.kind = "b1";
            return make(dt);
        }
        if (detail::is_codecs_encode(*g)) {
            const auto s = string_of(items.at(0));
            // _codecs.encode(text, 'latin1'): text holds UTF-8 of latin1 code points.
            return make(Bytes{detail::bytes_of(make(s))});
        }
        return make(Opaque{*g, items, nullptr});
    }

    void build(ObjectPtr& target, const ObjectPtr& state) {
        if (auto* dt = std::get_if<DType>(&target->value)) {
            const auto& st = tuple_items(state);
            if (st.size() > 1)
                if (std::holds_alternative<std::string>(st[1]->value) ||
                    std::holds_alternative<Bytes>(st[1]->value)) {
                    const auto order = string_of(st[1]);
                    if (!order.empty()) dt->byte_order = order[0] == '>' ? '>' : '<';
                }
            return;
        }
        if (auto* arr = std::get_if<NdArray>(&target->value)) {
            // (version, shape, dtype, is_fortran, rawdata)
            const auto& st = tuple_items(state);
            if (st.size() != 5) throw LoadError("pickle: unexpected ndarray state");
            for (const auto& dim : tuple_items(st[1])) {
                const auto* v = std::get_if<std::int64_t>(&dim->value);
                if (!v || *v < 0) throw LoadError("pickle: bad ndarray shape");
                arr->shape.push_back(static_cast<std::size_t>(*v));
            }
            const auto* dt = std::get_if<DType>(&st[2]->value);
            if (!dt) throw LoadError("pickle: ndarray without dtype");
            arr->dtype = *dt;
            if (const auto* f = std::get_if<bool>(&st[3]->value)) arr->fortran = *f;
            else if (const auto* i = std::get_if<std::int64_t>(&st[3]->value)) arr->fortran = *i != 0;
            if (std::holds_alternative<List>(st[4]->value))
                throw LoadError("pickle: object ndarrays are not supported");
            detail::fill_array(*arr, detail::bytes_of(st[4]));
            return;
        }
        if (auto* op = std::get_if<Opaque>(&target->value)) {
            op->state = state;
            return;
        }
        if (auto* d = std::get_if<Dict>(&target->value)) {
            if (const auto* sd = std::get_if<Dict>(&state->value))
                d->items.insert(d->items.end(), sd->items.begin(), sd->items.end());
            return;
        }
    }

    io::ByteReader r_;
    std::vector<ObjectPtr> stack_;
    std::vector<std::size_t> marks_;
    std::map<std::size_t, ObjectPtr> memo_;
};

inline ObjectPtr load(std::span<const char> data) {
    try {
        return Unpickler(data).load();
    } catch (const FormatError& e) {
        throw LoadError(std::string("corrupt archive: ") + e.what());
    } catch (const std::out_of_range&) {
        throw LoadError("corrupt archive: malformed pickle structure");
    } catch (const std::invalid_argument&) {
        throw LoadError("corrupt archive: malformed pickle text field");
    }
}

inline ObjectPtr load_file(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    try {
        return load(bytes);
    } catch (const LoadError& e) {
        throw LoadError(path.string() + ": " + e.what());
    }
}

} // namespace enhanceppg::pickle
