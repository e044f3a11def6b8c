#include "dmad/memory_bank.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "dmad/errors.hpp"
#include "dmad/rng.hpp"

namespace dmad {

const char* to_string(Branch b) { return b == Branch::normality ? "normality" : "abnormality"; }
const char* to_string(SampleLabel l) { return l == SampleLabel::normal ? "normal" : "abnormal"; }

Branch branch_from_string(const std::string& s) {
    if (s == "normality") return Branch::normality;
    if (s == "abnormality") return Branch::abnormality;
    throw DataError("unknown branch tag: " + s);
}

QueryGrid::QueryGrid(Tensor raw, Branch br, SampleLabel lb) : branch(br), label(lb), vectors(std::move(raw)) {
    if (vectors.ndim() != 2) throw ConfigError("QueryGrid: expected [K, C] tensor");
    l2_normalize_rows_inplace(vectors);
}

MemoryBank init_bank(int items, int channels, std::uint64_t seed, Branch branch) {
    if (items < 1 || channels < 1) throw ConfigError("init_bank: items and channels must be >= 1");
    MemoryBank bank;
    bank.branch = branch;
    bank.vectors = Tensor({items, channels});
    Rng rng(seed);
    for (std::size_t i = 0; i < bank.vectors.numel(); ++i) bank.vectors.data[i] = rng.normal();
    l2_normalize_rows_inplace(bank.vectors);
    // A zero-norm draw is vanishingly unlikely but would break the unit
    // invariant; regenerate that row from the stream.
    for (int m = 0; m < items; ++m) {
        while (l2_norm(bank.row(m), static_cast<std::size_t>(channels)) < 0.5) {
            double* p = bank.vectors.data.data() + static_cast<std::size_t>(m) * channels;
            for (int c = 0; c < channels; ++c) p[c] = rng.normal();
            const double n = l2_norm(p, static_cast<std::size_t>(channels));
            if (n > 1e-12)
                for (int c = 0; c < channels; ++c) p[c] /= n;
        }
    }
    return bank;
}

ReadResult read(const QueryGrid& queries, const MemoryBank& bank) {
    if (queries.channels() != bank.channels())
        throw ConfigError("read: query/bank channel mismatch");
    const int kq = queries.count(), m_items = bank.items(), ch = bank.channels();

    ReadResult out;
    out.weights = Tensor({kq, m_items});
    out.augmented = Tensor({kq, 2 * ch});

    std::vector<double> sims(static_cast<std::size_t>(m_items));
    for (int k = 0; k < kq; ++k) {
        const double* q = queries.row(k);
        double mx = -1e300;
        for (int m = 0; m < m_items; ++m) {
            sims[m] = dot(q, bank.row(m), static_cast<std::size_t>(ch));
            mx = std::max(mx, sims[m]);
        }
        double denom = 0.0;
        for (int m = 0; m < m_items; ++m) {
            sims[m] = std::exp(sims[m] - mx);
            denom += sims[m];
        }
        double* wrow = out.weights.data.data() + static_cast<std::size_t>(k) * m_items;
        double* arow = out.augmented.data.data() + static_cast<std::size_t>(k) * 2 * ch;
        for (int m = 0; m < m_items; ++m) {
            wrow[m] = sims[m] / denom;
            const double* p = bank.row(m);
            for (int c = 0; c < ch; ++c) arow[c] += wrow[m] * p[c];
        }
        for (int c = 0; c < ch; ++c) arow[ch + c] = q[c];
    }
    return out;
}

void update_unchecked(MemoryBank& bank, const QueryGrid& queries) {
    if (queries.channels() != bank.channels())
        throw ConfigError("update: query/bank channel mismatch");
    const int kq = queries.count(), m_items = bank.items(), ch = bank.channels();

    // Nearest memory per query; ties go to the lowest index.
    std::vector<int> nearest(static_cast<std::size_t>(kq));
    Tensor sims({kq, m_items});
    for (int k = 0; k < kq; ++k) {
        const double* q = queries.row(k);
        int best = 0;
        double best_sim = -1e300;
        for (int m = 0; m < m_items; ++m) {
            const double s = dot(q, bank.row(m), static_cast<std::size_t>(ch));
            sims(k, m) = s;
            if (s > best_sim) {
                best_sim = s;
                best = m;
            }
        }
        nearest[k] = best;
    }

    // Per memory: softmax over its assigned queries (the column softmax
    // restricted to the assigned set renormalizes to exactly this), then
    // one additive step and renormalization.
    Tensor updated = bank.vectors;
    for (int m = 0; m < m_items; ++m) {
        double mx = -1e300;
        int assigned = 0;
        for (int k = 0; k < kq; ++k) {
            if (nearest[k] != m) continue;
            ++assigned;
            mx = std::max(mx, sims(k, m));
        }
        if (assigned == 0) continue;  // untouched, bit-identical

        double denom = 0.0;
        for (int k = 0; k < kq; ++k)
            if (nearest[k] == m) denom += std::exp(sims(k, m) - mx);

        double* p = updated.data.data() + static_cast<std::size_t>(m) * ch;
        for (int k = 0; k < kq; ++k) {
            if (nearest[k] != m) continue;
            const double w = std::exp(sims(k, m) - mx) / denom;
            const double* q = queries.row(k);
            for (int c = 0; c < ch; ++c) p[c] += w * q[c];
        }
        // A degenerate step can cancel the row exactly; normalizing noise
        // would pick an arbitrary direction, so keep the old row instead.
        const double n = l2_norm(p, static_cast<std::size_t>(ch));
        if (n > 1e-12)
            for (int c = 0; c < ch; ++c) p[c] /= n;
        else
            for (int c = 0; c < ch; ++c) p[c] = bank.row(m)[c];
    }
    bank.vectors = std::move(updated);
}

void update(MemoryBank& bank, const QueryGrid& queries) {
    const bool match = (bank.branch == Branch::normality && queries.label == SampleLabel::normal) ||
                       (bank.branch == Branch::abnormality && queries.label == SampleLabel::abnormal);
    if (!match)
        throw ConfigError(std::string("update: ") + to_string(queries.label) +
                                    " queries cannot update the " + to_string(bank.branch) + " bank");
    update_unchecked(bank, queries);
}

namespace {
constexpr char kBankMagic[8] = {'D', 'M', 'B', 'A', 'N', 'K', '0', '1'};
}

void save_bank(const MemoryBank& bank, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("save_bank: cannot open " + path.string());
    f.write(kBankMagic, sizeof(kBankMagic));
    const std::uint32_t m = static_cast<std::uint32_t>(bank.items());
    const std::uint32_t c = static_cast<std::uint32_t>(bank.channels());
    f.write(reinterpret_cast<const char*>(&m), sizeof(m));
    f.write(reinterpret_cast<const char*>(&c), sizeof(c));
    f.write(reinterpret_cast<const char*>(bank.vectors.data.data()),
            static_cast<std::streamsize>(bank.vectors.numel() * sizeof(double)));
    if (!f) throw DataError("save_bank: write failed for " + path.string());

    nlohmann::json meta{{"format_version", 1}, {"branch", to_string(bank.branch)}};
    std::ofstream mf(path.string() + ".meta.json");
    mf << meta.dump(2) << "\n";
    if (!mf) throw DataError("save_bank: cannot write sidecar for " + path.string());
}

MemoryBank load_bank(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("load_bank: cannot open " + path.string());
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kBankMagic, sizeof(magic)) != 0)
        throw DataError("load_bank: bad magic in " + path.string());
    std::uint32_t m = 0, c = 0;
    f.read(reinterpret_cast<char*>(&m), sizeof(m));
    f.read(reinterpret_cast<char*>(&c), sizeof(c));
    if (!f || m == 0 || c == 0) throw DataError("load_bank: bad header in " + path.string());

    MemoryBank bank;
    bank.vectors = Tensor({static_cast<int>(m), static_cast<int>(c)});
    f.read(reinterpret_cast<char*>(bank.vectors.data.data()),
           static_cast<std::streamsize>(bank.vectors.numel() * sizeof(double)));
    if (!f) throw DataError("load_bank: truncated data in " + path.string());

    std::ifstream mf(path.string() + ".meta.json");
    if (!mf) throw DataError("load_bank: missing sidecar for " + path.string());
    nlohmann::json meta = nlohmann::json::parse(mf, nullptr, true, true);
    if (meta.value("format_version", 0) != 1)
        throw DataError("load_bank: unsupported format version in sidecar for " + path.string());
    bank.branch = branch_from_string(meta.at("branch").get<std::string>());
    return bank;
}

}  // namespace dmad
