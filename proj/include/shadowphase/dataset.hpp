#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "shadowphase/errors.hpp"
#include "shadowphase/random_unitary.hpp"
#include "shadowphase/rng.hpp"
#include "shadowphase/shadows.hpp"
#include "shadowphase/statevector.hpp"

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace shadowphase {

static_assert(std::endian::native == std::endian::little,
              "dataset format is little-endian; big-endian hosts are unsupported");

inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr char kDatasetMagic[4] = {'S', 'H', 'D', 'W'};
inline constexpr const char* kGeneratorVersion = "shadowphase-1";

// Generator parameters for one phase's dataset.
struct GenConfig {
    int phase_label = 0;        // 0 = trivial, 1 = SSB
    int n_sites = 16;           // N
    int patch_length = 6;       // l
    int depth = 1;              // t
    int shadows_per_state = 1000;  // n_s
    int states_per_phase = 100;    // n_b
    std::uint64_t seed = 0;
    int patch_start = -1;       // -1: centered, (N - l) / 2

    int resolved_patch_start() const {
        return patch_start >= 0 ? patch_start : (n_sites - patch_length) / 2;
    }

    void validate() const {
        if (phase_label != 0 && phase_label != 1)
            throw ConfigError("GenConfig: phase_label must be 0 or 1");
        if (n_sites < 2 || n_sites > kMaxQubits || n_sites % 2 != 0)
            throw ConfigError("GenConfig: n_sites must be even and in [2, " +
                              std::to_string(kMaxQubits) + "]");
        if (depth < 0) throw ConfigError("GenConfig: depth must be >= 0");
        if (patch_length < 1) throw ConfigError("GenConfig: patch_length must be >= 1");
        if (patch_length + 4 * depth > n_sites)
            throw ConfigError("GenConfig: patch_length " + std::to_string(patch_length) +
                              " exceeds N - 4t = " + std::to_string(n_sites - 4 * depth) +
                              " (lightcone margin)");
        if (shadows_per_state < 1) throw ConfigError("GenConfig: shadows_per_state must be >= 1");
        if (states_per_phase < 1) throw ConfigError("GenConfig: states_per_phase must be >= 1");
        const int ps = resolved_patch_start();
        if (ps < 0 || ps + patch_length > n_sites)
            throw ConfigError("GenConfig: patch does not fit the chain");
    }
};

struct StateRecord {
    std::uint8_t label = 0;
    std::vector<float> payload;  // n_s * l * 4 floats: theta, phi, chi, outcome
};

// In-memory mirror of one .shdw file.
struct Dataset {
    std::uint32_t version = kDatasetVersion;
    std::uint32_t n_s = 0;
    std::uint32_t patch_length = 0;
    std::uint32_t n_sites = 0;
    std::uint32_t depth = 0;
    std::uint64_t seed = 0;
    std::vector<StateRecord> states;

    std::size_t payload_floats_per_state() const {
        return static_cast<std::size_t>(n_s) * patch_length * 4;
    }
};

// One independent Haar U(2) on every site; removes any bias toward a fixed
// local basis without generating entanglement.
inline void randomize_onsite(Statevector& state, const RandomStream& rng) {
    const RandomStream base = rng.fork(kTagOnsite);
    for (int site = 0; site < state.n_qubits; ++site) {
        RandomStream r = base.fork(static_cast<std::uint64_t>(site));
        apply_1q(state, site, haar_u2(r));
    }
}

// t rounds of the brick-wall circuit: each round applies the odd layer
// (pairs (0,1), (2,3), ...) then the even layer (pairs (1,2), (3,4), ...,
// including the periodic wrap (N-1, 0)). Every gate is an independent Haar
// U(4), keyed by (round, layer, position).
inline void brickwall_fdlu(Statevector& state, int depth, const RandomStream& rng) {
    if (depth < 0) throw ConfigError("brickwall_fdlu: depth must be >= 0");
    if (state.n_qubits % 2 != 0)
        throw ConfigError("brickwall_fdlu: periodic brick wall needs an even chain");
    const RandomStream base = rng.fork(kTagBrickwall);
    for (int round = 0; round < depth; ++round) {
        for (int layer = 0; layer < 2; ++layer) {
            const RandomStream lrng =
                base.fork(static_cast<std::uint64_t>(2 * round + layer));
            for (int site = layer; site < state.n_qubits; site += 2) {
                RandomStream g = lrng.fork(static_cast<std::uint64_t>(site));
                apply_2q(state, site, haar_u4(g));
            }
        }
    }
}

// Test hooks for dataset generation; production paths use the defaults.
struct GenHooks {
    MeasureOptions measure;
    bool skip_onsite_randomization = false;
};

namespace detail {

inline StateRecord generate_state_record(const GenConfig& cfg, int state_index,
                                         const GenHooks& hooks) {
    Statevector state = cfg.phase_label == 0 ? new_all_ones(cfg.n_sites) : new_ghz(cfg.n_sites);
    const std::uint64_t key =
        (static_cast<std::uint64_t>(cfg.phase_label) << 32) | static_cast<std::uint32_t>(state_index);
    const RandomStream st = RandomStream(cfg.seed).fork(kTagState, key);
    if (!hooks.skip_onsite_randomization) randomize_onsite(state, st);
    brickwall_fdlu(state, cfg.depth, st);
    const ShadowSet shadows = measure_shadows(state, cfg.resolved_patch_start(),
                                              cfg.patch_length, cfg.shadows_per_state, st,
                                              hooks.measure);
    StateRecord rec;
    rec.label = static_cast<std::uint8_t>(cfg.phase_label);
    rec.payload.resize(static_cast<std::size_t>(cfg.shadows_per_state) * cfg.patch_length * 4);
    std::size_t w = 0;
    for (const ShadowSnapshot& snap : shadows.snapshots) {
        for (int k = 0; k < cfg.patch_length; ++k) {
            const EulerAngles& a = snap.basis[static_cast<std::size_t>(k)];
            rec.payload[w++] = static_cast<float>(a.theta);
            rec.payload[w++] = static_cast<float>(a.phi);
            rec.payload[w++] = static_cast<float>(a.chi);
            rec.payload[w++] = static_cast<float>(snap.outcomes[static_cast<std::size_t>(k)]);
        }
    }
    return rec;
}

}  // namespace detail

// The four-step protocol for one phase: representative state (|1...1> or
// GHZ), on-site randomization, depth-t brick wall, patch shadows. States are
// generated on independent RNG streams keyed by state index, so the result
// is identical whatever the thread schedule.
inline Dataset generate_phase_dataset(const GenConfig& cfg, const GenHooks& hooks = {}) {
    cfg.validate();
    Dataset d;
    d.n_s = static_cast<std::uint32_t>(cfg.shadows_per_state);
    d.patch_length = static_cast<std::uint32_t>(cfg.patch_length);
    d.n_sites = static_cast<std::uint32_t>(cfg.n_sites);
    d.depth = static_cast<std::uint32_t>(cfg.depth);
    d.seed = cfg.seed;
    d.states.resize(static_cast<std::size_t>(cfg.states_per_phase));
#if defined(_OPENMP)
#pragma omp parallel for schedule(dynamic)
#endif
    for (int i = 0; i < cfg.states_per_phase; ++i)
        d.states[static_cast<std::size_t>(i)] = detail::generate_state_record(cfg, i, hooks);
    return d;
}

namespace detail {

template <class T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& in, const char* what) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw FormatError(std::string("dataset: truncated while reading ") + what);
    return v;
}

}  // namespace detail

inline void write_dataset(const Dataset& d, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("write_dataset: cannot open " + path);
    out.write(kDatasetMagic, 4);
    detail::write_pod(out, d.version);
    detail::write_pod(out, static_cast<std::uint32_t>(d.states.size()));
    detail::write_pod(out, d.n_s);
    detail::write_pod(out, d.patch_length);
    detail::write_pod(out, d.n_sites);
    detail::write_pod(out, d.depth);
    detail::write_pod(out, d.seed);
    const std::size_t expect = d.payload_floats_per_state();
    for (const StateRecord& rec : d.states) {
        if (rec.payload.size() != expect)
            throw FormatError("write_dataset: state payload has " +
                              std::to_string(rec.payload.size()) + " floats, expected " +
                              std::to_string(expect));
        detail::write_pod(out, rec.label);
        out.write(reinterpret_cast<const char*>(rec.payload.data()),
                  static_cast<std::streamsize>(rec.payload.size() * sizeof(float)));
    }
    if (!out) throw FormatError("write_dataset: write failed for " + path);
}

inline Dataset read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("read_dataset: cannot open " + path);
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kDatasetMagic, 4) != 0)
        throw FormatError("read_dataset: bad magic in " + path);
    Dataset d;
    d.version = detail::read_pod<std::uint32_t>(in, "version");
    if (d.version != kDatasetVersion)
        throw FormatError("read_dataset: unsupported version " + std::to_string(d.version) +
                          " (expected " + std::to_string(kDatasetVersion) + ")");
    const auto n_states = detail::read_pod<std::uint32_t>(in, "n_states");
    d.n_s = detail::read_pod<std::uint32_t>(in, "n_s");
    d.patch_length = detail::read_pod<std::uint32_t>(in, "patch_length");
    d.n_sites = detail::read_pod<std::uint32_t>(in, "n_sites");
    d.depth = detail::read_pod<std::uint32_t>(in, "depth");
    d.seed = detail::read_pod<std::uint64_t>(in, "seed");
    if (d.patch_length == 0 || d.n_s == 0)
        throw FormatError("read_dataset: inconsistent header (n_s or l is zero)");
    const std::size_t expect = d.payload_floats_per_state();
    d.states.resize(n_states);
    for (StateRecord& rec : d.states) {
        rec.label = detail::read_pod<std::uint8_t>(in, "label");
        rec.payload.resize(expect);
        in.read(reinterpret_cast<char*>(rec.payload.data()),
                static_cast<std::streamsize>(expect * sizeof(float)));
        if (!in) throw FormatError("read_dataset: truncated payload in " + path);
    }
    return d;
}

namespace detail {

// float32 storage can round an angle just past its range edge. The gate is
// unchanged up to a global phase under theta/phi + 2pi and chi +- 4pi, so
// wrapping back is exact physics, not a fudge.
inline EulerAngles sanitize_stored_angles(double theta, double phi, double chi) {
    const double two_pi = 2.0 * std::numbers::pi;
    while (theta >= two_pi) theta -= two_pi;
    while (theta < 0.0) theta += two_pi;
    while (phi >= two_pi) phi -= two_pi;
    while (phi < 0.0) phi += two_pi;
    while (chi > two_pi) chi -= 2.0 * two_pi;
    while (chi < -two_pi) chi += 2.0 * two_pi;
    return {theta, phi, chi};
}

}  // namespace detail

// Shadow data of one stored state as a ShadowSet (for the non-ML baselines).
inline ShadowSet shadow_set_from_record(const Dataset& d, std::size_t state_index,
                                        int n_s_sub = 0) {
    const StateRecord& rec = d.states.at(state_index);
    const int l = static_cast<int>(d.patch_length);
    const int n = n_s_sub > 0 ? n_s_sub : static_cast<int>(d.n_s);
    if (n > static_cast<int>(d.n_s))
        throw ConfigError("shadow_set_from_record: n_s_sub exceeds stored n_s");
    ShadowSet set;
    set.patch_length = l;
    set.snapshots.resize(static_cast<std::size_t>(n));
    for (int s = 0; s < n; ++s) {
        ShadowSnapshot& snap = set.snapshots[static_cast<std::size_t>(s)];
        snap.basis.resize(static_cast<std::size_t>(l));
        snap.outcomes.resize(static_cast<std::size_t>(l));
        std::size_t r = static_cast<std::size_t>(s) * l * 4;
        for (int k = 0; k < l; ++k) {
            snap.basis[static_cast<std::size_t>(k)] = detail::sanitize_stored_angles(
                rec.payload[r], rec.payload[r + 1], rec.payload[r + 2]);
            snap.outcomes[static_cast<std::size_t>(k)] =
                rec.payload[r + 3] > 0.5f ? std::uint8_t{1} : std::uint8_t{0};
            r += 4;
        }
    }
    return set;
}

}  // namespace shadowphase
