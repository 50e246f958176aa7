#include "reftfl/intervention.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "reftfl/errors.hpp"

namespace reftfl {

double row_orthonormality_error(const Matrix& r) {
    const Matrix gram = matmul(r, transpose(r));
    double acc = 0.0;
    for (std::size_t i = 0; i < gram.rows(); ++i) {
        for (std::size_t j = 0; j < gram.cols(); ++j) {
            const double target = (i == j) ? 1.0 : 0.0;
            const double d = gram(i, j) - target;
            acc += d * d;
        }
    }
    return std::sqrt(acc);
}

LoReftParams make_loreft_params(Matrix w, Matrix r, Vector b) {
    if (w.rows() != r.rows() || w.cols() != r.cols() || b.size() != r.rows()) {
        throw ShapeError("loreft params: W, R, b shapes are inconsistent");
    }
    if (r.rows() > r.cols()) {
        throw ShapeError("loreft params: rank exceeds dimension");
    }
    if (!w.all_finite() || !r.all_finite() || !all_finite(b)) {
        throw NumericError("loreft params: non-finite entries");
    }
    if (row_orthonormality_error(r) > kOrthonormalityTol) {
        throw InputError("loreft params: R rows are not orthonormal");
    }
    return LoReftParams{std::move(w), std::move(r), std::move(b)};
}

LoReftParams init_loreft(std::size_t rank, std::size_t dim, Rng& rng, InitScheme scheme) {
    if (rank < 1 || rank > dim) {
        throw ShapeError("init_loreft: need 1 <= rank <= dim, got rank " + std::to_string(rank) +
                         ", dim " + std::to_string(dim));
    }
    Matrix r = random_orthonormal(rank, dim, rng);
    Matrix w = (scheme == InitScheme::IdentityStart) ? r : gaussian_matrix(rank, dim, rng, 0.01);
    Vector b(rank, 0.0);
    return LoReftParams{std::move(w), std::move(r), std::move(b)};
}

Vector loreft_apply(const LoReftParams& p, const Vector& h) {
    if (h.size() != p.dim()) {
        throw ShapeError("apply: hidden size " + std::to_string(h.size()) + " vs dim " +
                         std::to_string(p.dim()));
    }
    // s = Wh + b − Rh, output = h + Rᵀ s
    Vector s = matvec(p.w, h);
    const Vector rh = matvec(p.r, h);
    for (std::size_t i = 0; i < s.size(); ++i) {
        s[i] += p.b[i] - rh[i];
    }
    Vector out = matvec_t(p.r, s);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += h[i];
    }
    return out;
}

LoReftGrads zero_grads(std::size_t rank, std::size_t dim) {
    return LoReftGrads{Matrix(rank, dim), Matrix(rank, dim), Vector(rank, 0.0)};
}

ApplyVjp loreft_apply_vjp(const LoReftParams& p, const Vector& h, const Vector& upstream) {
    if (h.size() != p.dim() || upstream.size() != p.dim()) {
        throw ShapeError("apply_vjp: vector lengths do not match dim");
    }
    const std::size_t rank = p.rank();
    const std::size_t dim = p.dim();

    // s = Wh + b − Rh, v = R·upstream
    Vector s = matvec(p.w, h);
    const Vector rh = matvec(p.r, h);
    for (std::size_t i = 0; i < rank; ++i) {
        s[i] += p.b[i] - rh[i];
    }
    const Vector v = matvec(p.r, upstream);

    ApplyVjp out;
    out.params = zero_grads(rank, dim);
    out.params.b = v;                       // ∂/∂b: Rᵀ chain
    add_outer(out.params.w, v, h);          // ∂/∂W: v hᵀ
    add_outer(out.params.r, s, upstream);   // ∂/∂R: s uᵀ − v hᵀ
    add_outer(out.params.r, v, h, -1.0);

    // dL/dh = upstream + (Wᵀ − Rᵀ) v
    out.input = matvec_t(p.w, v);
    const Vector rtv = matvec_t(p.r, v);
    for (std::size_t j = 0; j < dim; ++j) {
        out.input[j] += upstream[j] - rtv[j];
    }
    return out;
}

int InterventionSchedule::slot_count() const {
    const int per_layer = tied ? 1 : num_positions();
    return static_cast<int>(layers.size()) * per_layer;
}

std::vector<int> InterventionSchedule::positions(int seq_len) const {
    std::vector<int> pos;
    pos.reserve(static_cast<std::size_t>(num_positions()));
    for (int i = 0; i < prefix_len; ++i) {
        pos.push_back(i);
    }
    for (int i = 0; i < suffix_len; ++i) {
        pos.push_back(seq_len - suffix_len + i);
    }
    return pos;
}

void InterventionSchedule::validate(int num_layers, int seq_len) const {
    if (prefix_len < 0 || suffix_len < 0) {
        throw ScheduleError("schedule: negative prefix/suffix length");
    }
    if (prefix_len + suffix_len > seq_len) {
        throw ScheduleError("schedule: prefix " + std::to_string(prefix_len) + " + suffix " +
                            std::to_string(suffix_len) + " overlap in a sequence of length " +
                            std::to_string(seq_len));
    }
    if (num_positions() == 0) {
        throw ScheduleError("schedule: no positions selected");
    }
    if (layers.empty()) {
        throw ScheduleError("schedule: no layers selected");
    }
    for (int l : layers) {
        if (l < 0 || l >= num_layers) {
            throw ScheduleError("schedule: layer " + std::to_string(l) + " outside backbone depth " +
                                std::to_string(num_layers));
        }
    }
    std::vector<int> sorted = layers;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw ScheduleError("schedule: duplicate layer index");
    }
}

std::uint64_t param_count(const InterventionSchedule& schedule, std::size_t rank, std::size_t dim) {
    const std::uint64_t per_slot = 2ULL * rank * dim + rank;
    return static_cast<std::uint64_t>(schedule.slot_count()) * per_slot;
}

int ParamBundle::slot_index(int layer, int position) const {
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i].layer != layer) continue;
        if (schedule.tied || slots[i].position == position) {
            return static_cast<int>(i);
        }
    }
    return -1;
}

ParamBundle make_bundle(const InterventionSchedule& schedule, std::size_t rank, std::size_t dim,
                        int seq_len, Rng& rng, InitScheme scheme) {
    ParamBundle bundle;
    bundle.schedule = schedule;
    const std::vector<int> pos = schedule.positions(seq_len);
    for (int layer : schedule.layers) {
        if (schedule.tied) {
            bundle.slots.push_back(Slot{layer, kTiedPosition});
            bundle.params.push_back(init_loreft(rank, dim, rng, scheme));
        } else {
            for (int p : pos) {
                bundle.slots.push_back(Slot{layer, p});
                bundle.params.push_back(init_loreft(rank, dim, rng, scheme));
            }
        }
    }
    return bundle;
}

namespace {

void write_doubles(std::ostream& out, const Vector& values) {
    char buf[64];
    for (double v : values) {
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
        (void)ec;
        out << ' ';
        out.write(buf, ptr - buf);
    }
    out << '\n';
}

Vector read_doubles(std::istream& in, std::size_t count, std::size_t line, const char* tag) {
    std::string head;
    if (!(in >> head) || head != tag) {
        throw ParseError(std::string("checkpoint: expected '") + tag + "' record", line);
    }
    Vector values(count);
    std::string token;
    for (std::size_t i = 0; i < count; ++i) {
        if (!(in >> token)) {
            throw ParseError("checkpoint: truncated value list", line);
        }
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
        if (ec != std::errc() || ptr != token.data() + token.size()) {
            throw ParseError("checkpoint: bad number '" + token + "'", line);
        }
        values[i] = v;
    }
    return values;
}

}  // namespace

void save_checkpoint(const ParamBundle& bundle, std::uint64_t seed, std::ostream& out) {
    out << "reftfl-checkpoint v1\n";
    out << "seed " << seed << '\n';
    out << "schedule layers=";
    for (std::size_t i = 0; i < bundle.schedule.layers.size(); ++i) {
        if (i) out << ',';
        out << bundle.schedule.layers[i];
    }
    out << " prefix=" << bundle.schedule.prefix_len << " suffix=" << bundle.schedule.suffix_len
        << " tied=" << (bundle.schedule.tied ? 1 : 0) << " rank=" << bundle.rank()
        << " dim=" << bundle.dim() << '\n';
    for (std::size_t i = 0; i < bundle.slots.size(); ++i) {
        const Slot& slot = bundle.slots[i];
        out << "slot layer=" << slot.layer << " position=";
        if (slot.position == kTiedPosition) {
            out << "tied";
        } else {
            out << slot.position;
        }
        out << '\n';
        out << "W";
        write_doubles(out, bundle.params[i].w.data());
        out << "R";
        write_doubles(out, bundle.params[i].r.data());
        out << "b";
        write_doubles(out, bundle.params[i].b);
    }
}

namespace {

long parse_long(const std::string& text, std::size_t line) {
    long v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw ParseError("checkpoint: bad integer '" + text + "'", line);
    }
    return v;
}

// Splits "key=value" and checks the key.
std::string expect_kv(std::istream& in, const char* key, std::size_t line) {
    std::string token;
    if (!(in >> token)) {
        throw ParseError(std::string("checkpoint: missing field '") + key + "'", line);
    }
    const std::string prefix = std::string(key) + "=";
    if (token.rfind(prefix, 0) != 0) {
        throw ParseError("checkpoint: expected field '" + std::string(key) + "', got '" + token + "'", line);
    }
    return token.substr(prefix.size());
}

}  // namespace

Checkpoint load_checkpoint(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "reftfl-checkpoint v1") {
        throw ParseError("checkpoint: unknown header", 1);
    }
    Checkpoint ck;
    std::string word;
    if (!(in >> word) || word != "seed" || !(in >> ck.seed)) {
        throw ParseError("checkpoint: missing seed record", 2);
    }
    if (!(in >> word) || word != "schedule") {
        throw ParseError("checkpoint: missing schedule record", 3);
    }
    InterventionSchedule schedule;
    {
        const std::string layers = expect_kv(in, "layers", 3);
        std::stringstream ss(layers);
        std::string item;
        while (std::getline(ss, item, ',')) {
            schedule.layers.push_back(static_cast<int>(parse_long(item, 3)));
        }
        schedule.prefix_len = static_cast<int>(parse_long(expect_kv(in, "prefix", 3), 3));
        schedule.suffix_len = static_cast<int>(parse_long(expect_kv(in, "suffix", 3), 3));
        schedule.tied = parse_long(expect_kv(in, "tied", 3), 3) != 0;
    }
    const auto rank = static_cast<std::size_t>(parse_long(expect_kv(in, "rank", 3), 3));
    const auto dim = static_cast<std::size_t>(parse_long(expect_kv(in, "dim", 3), 3));

    ck.bundle.schedule = schedule;
    const int expected_slots = schedule.slot_count();
    std::size_t line_no = 4;
    for (int s = 0; s < expected_slots; ++s) {
        if (!(in >> word) || word != "slot") {
            throw ParseError("checkpoint: expected slot record", line_no);
        }
        Slot slot;
        slot.layer = static_cast<int>(parse_long(expect_kv(in, "layer", line_no), line_no));
        const std::string pos = expect_kv(in, "position", line_no);
        slot.position = (pos == "tied") ? kTiedPosition : static_cast<int>(parse_long(pos, line_no));
        Matrix w(rank, dim, read_doubles(in, rank * dim, line_no + 1, "W"));
        Matrix r(rank, dim, read_doubles(in, rank * dim, line_no + 2, "R"));
        Vector b = read_doubles(in, rank, line_no + 3, "b");
        ck.bundle.slots.push_back(slot);
        ck.bundle.params.push_back(make_loreft_params(std::move(w), std::move(r), std::move(b)));
        line_no += 4;
    }
    return ck;
}

}  // namespace reftfl
