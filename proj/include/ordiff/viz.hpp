// SPDX-License-Identifier: Apache-2.0
//
// Text dumps of forward and reverse trajectories, one `t=<step> <sequence>`
// line per snapshot.
#ifndef ORDIFF_VIZ_HPP_
#define ORDIFF_VIZ_HPP_

#include <charconv>
#include <string>
#include <vector>

#include "ordiff/corpus.hpp"
#include "ordiff/diffusion.hpp"
#include "ordiff/schedule.hpp"
#include "ordiff/util.hpp"

namespace ordiff {

inline std::string dump_line(int t, std::span<const int> ids, const Vocab& vocab) {
    return "t=" + std::to_string(t) + " " + decode(ids, vocab);
}

/// Forward snapshots at `snapshots` evenly spaced steps from 0 to T. One
/// uniform per position is shared across steps, so the masked sets are
/// nested: position i is masked at t iff u_i < m_t(c_i).
inline std::vector<std::string> visualize_forward(std::span<const int> sample, const Vocab& vocab, const ScheduleTable& table,
                                                  int snapshots, std::uint64_t seed) {
    if (vocab.size() != table.V) throw Error(Errc::incompatible_schedule, "vocabulary and schedule sizes differ");
    for (int id : sample)
        if (id < 0 || id >= table.V) throw Error(Errc::unknown_id, "id " + std::to_string(id));
    auto ts = even_timesteps(table.T, snapshots);
    std::ranges::reverse(ts);
    Rng rng(seed);
    std::vector<double> u(sample.size());
    for (auto& x : u) x = uniform01(rng);
    std::vector<std::string> lines;
    std::vector<int> z(sample.size());
    for (int t : ts) {
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = u[i] < table.at(t, sample[i]) ? table.V : sample[i];
        lines.push_back(dump_line(t, z, vocab));
    }
    return lines;
}

/// Reverse snapshots from t = T down to 0 of one generated sequence.
template <Denoiser Model>
std::vector<std::string> visualize_reverse(const Model& model, const Vocab& vocab, const ScheduleTable& table, std::size_t length,
                                           int snapshots, std::uint64_t seed) {
    if (vocab.size() != table.V) throw Error(Errc::incompatible_schedule, "vocabulary and schedule sizes differ");
    const auto ts = even_timesteps(table.T, snapshots);
    Rng rng(seed);
    const auto traj = generate(model, table, length, rng, ts);
    std::vector<std::string> lines;
    for (const auto& [t, z] : traj.snapshots) lines.push_back(dump_line(t, z, vocab));
    return lines;
}

/// Parses `t=<int> <payload>`; false when the line is malformed.
inline bool parse_dump_line(std::string_view line, int& t, std::string& payload) {
    if (!line.starts_with("t=")) return false;
    const auto sp = line.find(' ');
    if (sp == std::string_view::npos) return false;
    const auto num = line.substr(2, sp - 2);
    auto [p, ec] = std::from_chars(num.data(), num.data() + num.size(), t);
    if (ec != std::errc() || p != num.data() + num.size()) return false;
    payload = std::string(line.substr(sp + 1));
    return true;
}

} // namespace ordiff

#endif // ORDIFF_VIZ_HPP_
