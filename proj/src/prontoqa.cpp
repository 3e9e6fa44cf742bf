#include "lrmtrace/prontoqa.hpp"

#include "lrmtrace/core.hpp"
#include "lrmtrace/errors.hpp"

#include <algorithm>
#include <cctype>
#include <deque>

namespace lrmtrace {

int Ontology::child_count(const std::string& node) const {
    auto it = children.find(node);
    return it == children.end() ? 0 : static_cast<int>(it->second.size());
}

int Ontology::mention_count(const std::string& node) const {
    auto it = mentions.find(node);
    return it == mentions.end() ? 0 : it->second;
}

std::string singular(std::string_view word) {
    std::string w(word);
    for (auto& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (w.size() > 4 && w.ends_with("uses")) return w.substr(0, w.size() - 2);
    if (w.size() > 1 && w.ends_with('s') && !w.ends_with("ss")) return w.substr(0, w.size() - 1);
    return w;
}

namespace {

std::vector<std::string> split_words(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

struct Sentence {
    std::string subject;
    bool subject_is_entity = false;
    std::string object;
    bool negated = false;
    bool category = false; ///< object is a category, else a property
};

// "Max is a vumpus" / "Each vumpus is (not) a brimpus" / "Every gorpus is
// moderate" / "Brimpuses are (not) grimpuses" / "Max is not wooden".
Sentence parse_sentence(std::string_view text) {
    auto w = split_words(text);
    if (w.size() < 3) throw ParseError("cannot read sentence '" + std::string(text) + "'");
    Sentence s;
    std::size_t i = 0;
    const auto first = lower(w[0]);
    bool plural = false;
    if (first == "each" || first == "every") {
        s.subject = lower(w[1]);
        i = 2;
    } else {
        const bool capital = std::isupper(static_cast<unsigned char>(w[0][0])) != 0;
        if (i + 1 < w.size() && lower(w[1]) == "are") plural = true;
        s.subject = plural ? singular(w[0]) : (capital && lower(w[1]) == "is" ? w[0] : lower(w[0]));
        s.subject_is_entity = !plural;
        i = 1;
    }
    if (i >= w.size()) throw ParseError("cannot read sentence '" + std::string(text) + "'");
    const auto verb = lower(w[i++]);
    if (verb != "is" && verb != "are") throw ParseError("cannot read sentence '" + std::string(text) + "'");
    if (i < w.size() && lower(w[i]) == "not") {
        s.negated = true;
        ++i;
    }
    if (i < w.size() && (lower(w[i]) == "a" || lower(w[i]) == "an")) {
        s.category = true;
        ++i;
    }
    if (i + 1 != w.size()) throw ParseError("cannot read sentence '" + std::string(text) + "'");
    const auto obj = lower(w[i]);
    if (verb == "are" && !s.category) {
        // plural nouns are categories, adjectives are properties
        s.category = obj.size() > 1 && obj.ends_with('s') && !obj.ends_with("ss");
    }
    s.object = s.category && verb == "are" ? singular(obj) : obj;
    return s;
}

} // namespace

ProntoInstance parse_prontoqa(std::string_view question) {
    const std::string_view marker = "True or false:";
    const auto at = question.find(marker);
    if (at == std::string_view::npos) throw ParseError("question has no 'True or false:' query");
    const auto body = question.substr(0, at);
    auto query_text = trim(question.substr(at + marker.size()));
    while (!query_text.empty() && (query_text.back() == '.' || query_text.back() == '"')) query_text.remove_suffix(1);

    ProntoInstance inst;
    auto& o = inst.ontology;
    std::size_t start = 0;
    while (start < body.size()) {
        auto end = body.find('.', start);
        if (end == std::string_view::npos) end = body.size();
        auto sentence = trim(body.substr(start, end - start));
        start = end + 1;
        while (!sentence.empty() && sentence.front() == '"') sentence.remove_prefix(1);
        if (sentence.empty()) continue;
        const auto s = parse_sentence(sentence);
        ++o.mentions[s.subject];
        if (s.category) {
            if (s.negated) {
                // "X is not a Y": a negative category fact acts as a property
                o.properties[s.subject]["a " + s.object] = false;
                ++o.mentions[s.object];
            } else {
                auto& kids = o.children[s.subject];
                if (std::find(kids.begin(), kids.end(), s.object) == kids.end()) kids.push_back(s.object);
                ++o.mentions[s.object];
            }
        } else {
            o.properties[s.subject][s.object] = !s.negated;
        }
    }
    const auto q = parse_sentence(query_text);
    if (q.category) throw ParseError("only property queries are supported");
    inst.query = {q.subject, q.object, q.negated};
    return inst;
}

namespace {

std::optional<bool> property_at(const Ontology& o, const std::string& node, const std::string& property) {
    auto it = o.properties.find(node);
    if (it == o.properties.end()) return std::nullopt;
    auto p = it->second.find(property);
    if (p == it->second.end()) return std::nullopt;
    return p->second;
}

bool answer_for(const ProntoQuery& q, bool holds) { return q.negated ? !holds : holds; }

} // namespace

HeuristicResult prontoqa_heuristic(const ProntoInstance& instance, HeuristicOrder order) {
    const auto& o = instance.ontology;
    const auto& q = instance.query;
    HeuristicResult r;
    std::set<std::string> seen;
    std::string node = q.entity;
    for (;;) {
        r.path.push_back(node);
        if (!seen.insert(node).second) throw NoPath("cycle at " + node);
        if (auto v = property_at(o, node, q.property)) {
            r.answer = answer_for(q, *v);
            return r;
        }
        auto it = o.children.find(node);
        if (it == o.children.end() || it->second.empty())
            throw NoPath("no child and no '" + q.property + "' property at " + node);
        auto key = [&](const std::string& c) {
            const int m = o.mention_count(c);
            const int k = o.child_count(c);
            return order == HeuristicOrder::mentions_first ? std::make_pair(m, k) : std::make_pair(k, m);
        };
        node = *std::min_element(it->second.begin(), it->second.end(), [&](const auto& a, const auto& b) {
            const auto ka = key(a);
            const auto kb = key(b);
            if (ka != kb) return ka > kb;
            return a < b;
        });
    }
}

std::optional<bool> prontoqa_exhaustive(const ProntoInstance& instance) {
    const auto& o = instance.ontology;
    const auto& q = instance.query;
    std::set<std::string> seen{q.entity};
    std::deque<std::string> queue{q.entity};
    std::optional<bool> found;
    while (!queue.empty()) {
        const auto node = queue.front();
        queue.pop_front();
        if (auto v = property_at(o, node, q.property)) {
            if (found && *found != *v) return std::nullopt;
            found = v;
        }
        if (auto it = o.children.find(node); it != o.children.end())
            for (const auto& c : it->second)
                if (seen.insert(c).second) queue.push_back(c);
    }
    if (!found) return std::nullopt;
    return answer_for(q, *found);
}

// ----------------------------------------------------------------------------
// Generator
// ----------------------------------------------------------------------------

namespace {

constexpr const char* kCategories[] = {"wumpus", "yumpus", "zumpus",  "dumpus", "rompus", "numpus", "tumpus",
                                       "vumpus", "impus",  "jompus",  "gorpus", "shumpus", "lempus", "sterpus",
                                       "grimpus", "lorpus", "brimpus", "kerpus", "fompus", "dalpus", "borpus"};
constexpr const char* kAdjectives[] = {"wooden", "dull",  "spicy", "windy", "large",   "hot",   "opaque",
                                       "mean",   "moderate", "orange", "bright", "cold", "sweet", "happy",
                                       "small",  "fast",  "liquid", "red",  "blue",   "kind",  "bitter",
                                       "shy",    "angry", "feisty", "metallic", "sour", "discordant", "transparent"};
constexpr const char* kEntities[] = {"Max", "Sally", "Alex", "Polly", "Rex", "Sam", "Wren", "Fae", "Stella"};

std::string plural(const std::string& category) { return category + "es"; }

std::string capitalize(std::string s) {
    if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s;
}

std::string category_sentence(Rng& rng, const std::string& a, const std::string& b) {
    if (rng.bernoulli(0.5)) return capitalize(plural(a)) + " are " + plural(b) + ".";
    return (rng.bernoulli(0.5) ? "Each " : "Every ") + a + " is a " + b + ".";
}

std::string property_sentence(Rng& rng, const std::string& a, const std::string& adj, bool holds) {
    const std::string neg = holds ? "" : "not ";
    if (rng.bernoulli(0.5)) return capitalize(plural(a)) + " are " + neg + adj + ".";
    return (rng.bernoulli(0.5) ? "Each " : "Every ") + a + " is " + neg + adj + ".";
}

template <typename T, std::size_t N>
std::vector<std::string> shuffled(Rng& rng, const T (&items)[N]) {
    std::vector<std::string> v(std::begin(items), std::end(items));
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    return v;
}

} // namespace

GeneratedPronto generate_prontoqa(Rng& rng, const ProntoSpec& spec) {
    if (spec.min_hops < 1 || spec.max_hops < spec.min_hops || spec.max_hops > 8)
        throw Error("hops must satisfy 1 <= min_hops <= max_hops <= 8");
    const int hops = static_cast<int>(rng.uniform_int(spec.min_hops, spec.max_hops));
    auto cats = shuffled(rng, kCategories);
    auto adjs = shuffled(rng, kAdjectives);
    std::size_t next_cat = 0;
    std::size_t next_adj = 0;
    auto cat = [&] { return cats.at(next_cat++); };
    const std::string entity = kEntities[rng.uniform_int(0, static_cast<std::int64_t>(std::size(kEntities)) - 1)];
    const std::string query_adj = adjs.at(next_adj++);
    auto adj = [&] { return adjs.at(next_adj++); };

    std::vector<std::string> sentences;
    std::vector<std::string> chain;
    for (int i = 0; i < hops; ++i) chain.push_back(cat());
    const bool holds = rng.bernoulli(0.5);

    // Gold chain. Every gold node carries at least one fact besides its
    // chain edges, side leaves carry exactly one, so the chain is always the
    // busiest branch.
    sentences.push_back(entity + " is a " + chain[0] + ".");
    for (int i = 0; i < hops; ++i) {
        const auto& c = chain[static_cast<std::size_t>(i)];
        const bool last = i + 1 == hops;
        if (!last) sentences.push_back(category_sentence(rng, c, chain[static_cast<std::size_t>(i) + 1]));
        const bool side = i == 0 || (!last && rng.bernoulli(0.6));
        const bool prop = i == 0 || last || !side || rng.bernoulli(0.5);
        if (side) sentences.push_back(category_sentence(rng, c, cat()));
        if (prop) sentences.push_back(property_sentence(rng, c, adj(), rng.bernoulli(0.5)));
        if (last) sentences.push_back(property_sentence(rng, c, query_adj, holds));
    }
    // side leaves get one property each
    for (std::size_t i = chain.size(); i < next_cat; ++i)
        sentences.push_back(property_sentence(rng, cats[i], adj(), rng.bernoulli(0.5)));
    // a second membership of the entity with a short branch
    if (rng.bernoulli(0.7)) {
        const auto d = cat();
        sentences.push_back(entity + " is a " + d + ".");
        sentences.push_back(category_sentence(rng, d, cat()));
    }
    // the queried property on an unreachable node, with the other value
    sentences.push_back(property_sentence(rng, cat(), query_adj, !holds));

    for (std::size_t i = sentences.size(); i > 1; --i)
        std::swap(sentences[i - 1], sentences[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    // the entity's memberships come last, as in the dataset
    std::stable_partition(sentences.begin(), sentences.end(),
                          [&](const std::string& s) { return !s.starts_with(entity + " is a"); });

    GeneratedPronto g;
    const bool negated_query = rng.bernoulli(0.5);
    for (const auto& s : sentences) g.question += s + " ";
    g.question += "True or false: " + entity + " is " + (negated_query ? "not " : "") + query_adj + ".";
    g.answer = negated_query ? !holds : holds;
    g.gold_path.push_back(entity);
    g.gold_path.insert(g.gold_path.end(), chain.begin(), chain.end());
    return g;
}

} // namespace lrmtrace
