#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "wrf/matrix.hpp"

namespace wrf::detail {

// Network simplex specialized to the balanced transportation problem:
// m supply atoms, n demand atoms, one uncapacitated arc per (i, j) pair plus
// one artificial arc per atom toward a virtual root. Spanning-tree state is
// kept in thread/rev-thread/succ-num/last-succ form; pivots use blockwise
// candidate search. Supplies and demands must be nonnegative and balanced.
class TransportSimplex {
public:
  TransportSimplex(std::vector<double> supply, std::vector<double> demand,
                   std::vector<double> cost)
      : m_(static_cast<int>(supply.size())),
        n_(static_cast<int>(demand.size())),
        real_arcs_(static_cast<std::int64_t>(m_) * n_),
        all_arcs_(real_arcs_ + m_ + n_),
        cost_(std::move(cost)) {
    const int nodes = m_ + n_;
    root_ = nodes;
    cost_.resize(static_cast<std::size_t>(all_arcs_), 0.0);
    flow_.assign(static_cast<std::size_t>(all_arcs_), 0.0);
    state_.assign(static_cast<std::size_t>(all_arcs_), STATE_LOWER);
    pi_.assign(static_cast<std::size_t>(nodes) + 1, 0.0);
    parent_.assign(static_cast<std::size_t>(nodes) + 1, 0);
    pred_.assign(static_cast<std::size_t>(nodes) + 1, 0);
    thread_.assign(static_cast<std::size_t>(nodes) + 1, 0);
    rev_thread_.assign(static_cast<std::size_t>(nodes) + 1, 0);
    succ_num_.assign(static_cast<std::size_t>(nodes) + 1, 0);
    last_succ_.assign(static_cast<std::size_t>(nodes) + 1, 0);
    forward_.assign(static_cast<std::size_t>(nodes) + 1, false);

    double max_cost = 0.0;
    for (std::int64_t a = 0; a < real_arcs_; ++a)
      max_cost = std::max(max_cost, cost_[static_cast<std::size_t>(a)]);
    const double art_cost = (max_cost + 1.0) * (nodes + 1);

    // Star-shaped initial basis: every atom hangs off the root through its
    // artificial arc. Supply arcs point atom -> root at zero cost; demand
    // arcs point root -> atom at big-M cost so real arcs price in.
    parent_[static_cast<std::size_t>(root_)] = -1;
    pred_[static_cast<std::size_t>(root_)] = -1;
    thread_[static_cast<std::size_t>(root_)] = 0;
    rev_thread_[0] = root_;
    succ_num_[static_cast<std::size_t>(root_)] = nodes + 1;
    last_succ_[static_cast<std::size_t>(root_)] = root_ - 1;
    pi_[static_cast<std::size_t>(root_)] = 0.0;

    for (int u = 0; u < nodes; ++u) {
      const std::int64_t e = real_arcs_ + u;
      parent_[static_cast<std::size_t>(u)] = root_;
      pred_[static_cast<std::size_t>(u)] = e;
      thread_[static_cast<std::size_t>(u)] = u + 1;
      rev_thread_[static_cast<std::size_t>(u) + 1] = u;
      succ_num_[static_cast<std::size_t>(u)] = 1;
      last_succ_[static_cast<std::size_t>(u)] = u;
      state_[static_cast<std::size_t>(e)] = STATE_TREE;
      if (u < m_) {
        forward_[static_cast<std::size_t>(u)] = true;
        pi_[static_cast<std::size_t>(u)] = 0.0;
        flow_[static_cast<std::size_t>(e)] = supply[static_cast<std::size_t>(u)];
      } else {
        forward_[static_cast<std::size_t>(u)] = false;
        pi_[static_cast<std::size_t>(u)] = art_cost;
        cost_[static_cast<std::size_t>(e)] = art_cost;
        flow_[static_cast<std::size_t>(e)] = demand[static_cast<std::size_t>(u - m_)];
      }
    }

    next_arc_ = 0;
    block_size_ = std::max<std::int64_t>(
        static_cast<std::int64_t>(std::sqrt(static_cast<double>(real_arcs_))), 16);
  }

  // Runs pivots to optimality. Throws on structural failure, which a
  // balanced transportation instance cannot trigger unless state corrupts.
  void solve(std::int64_t max_pivots) {
    std::int64_t pivots = 0;
    while (find_entering_arc()) {
      if (++pivots > max_pivots)
        throw InternalError("transport solver exceeded pivot budget");
      find_join_node();
      if (!find_leaving_arc())
        throw InternalError("transport solver hit an unbounded cycle");
      change_flow();
      update_tree();
      update_potentials();
    }
    double residual = 0.0;
    for (std::int64_t e = real_arcs_; e < all_arcs_; ++e)
      residual = std::max(residual, std::fabs(flow_[static_cast<std::size_t>(e)]));
    if (residual > 1e-7)
      throw InternalError("transport solver left artificial flow behind");
  }

  double flow(int i, int j) const {
    return flow_[static_cast<std::size_t>(i) * static_cast<std::size_t>(n_) +
                 static_cast<std::size_t>(j)];
  }

  double total_cost() const {
    double total = 0.0;
    for (std::int64_t a = 0; a < real_arcs_; ++a)
      total += flow_[static_cast<std::size_t>(a)] * cost_[static_cast<std::size_t>(a)];
    return total;
  }

private:
  static constexpr signed char STATE_TREE = 0;
  static constexpr signed char STATE_LOWER = 1;

  int arc_source(std::int64_t a) const {
    if (a < real_arcs_) return static_cast<int>(a / n_);
    const int u = static_cast<int>(a - real_arcs_);
    return u < m_ ? u : root_;
  }

  int arc_target(std::int64_t a) const {
    if (a < real_arcs_) return m_ + static_cast<int>(a % n_);
    const int u = static_cast<int>(a - real_arcs_);
    return u < m_ ? root_ : u;
  }

  bool find_entering_arc() {
    double best = 0.0;
    std::int64_t e = next_arc_;
    std::int64_t countdown = block_size_;
    for (std::int64_t scanned = 0; scanned < real_arcs_; ++scanned, ++e) {
      if (e == real_arcs_) e = 0;
      const double rc =
          state_[static_cast<std::size_t>(e)] *
          (cost_[static_cast<std::size_t>(e)] +
           pi_[static_cast<std::size_t>(arc_source(e))] -
           pi_[static_cast<std::size_t>(arc_target(e))]);
      if (rc < best) {
        best = rc;
        in_arc_ = e;
      }
      if (--countdown == 0) {
        if (accept_candidate(best)) {
          next_arc_ = e;
          return true;
        }
        countdown = block_size_;
      }
    }
    if (accept_candidate(best)) {
      next_arc_ = e;
      return true;
    }
    return false;
  }

  bool accept_candidate(double best) const {
    if (best >= 0.0) return false;
    const double scale =
        std::max({std::fabs(pi_[static_cast<std::size_t>(arc_source(in_arc_))]),
                  std::fabs(pi_[static_cast<std::size_t>(arc_target(in_arc_))]),
                  std::fabs(cost_[static_cast<std::size_t>(in_arc_)]), 1.0});
    return best < -1e-12 * scale;
  }

  void find_join_node() {
    int u = arc_source(in_arc_);
    int v = arc_target(in_arc_);
    while (u != v) {
      if (succ_num_[static_cast<std::size_t>(u)] < succ_num_[static_cast<std::size_t>(v)])
        u = parent_[static_cast<std::size_t>(u)];
      else
        v = parent_[static_cast<std::size_t>(v)];
    }
    join_ = u;
  }

  bool find_leaving_arc() {
    const int first = arc_source(in_arc_);
    const int second = arc_target(in_arc_);
    const double inf = std::numeric_limits<double>::max();
    delta_ = inf;
    int result = 0;
    for (int u = first; u != join_; u = parent_[static_cast<std::size_t>(u)]) {
      const double d =
          forward_[static_cast<std::size_t>(u)]
              ? flow_[static_cast<std::size_t>(pred_[static_cast<std::size_t>(u)])]
              : inf;
      if (d < delta_) {
        delta_ = d;
        u_out_ = u;
        result = 1;
      }
    }
    for (int u = second; u != join_; u = parent_[static_cast<std::size_t>(u)]) {
      const double d =
          forward_[static_cast<std::size_t>(u)]
              ? inf
              : flow_[static_cast<std::size_t>(pred_[static_cast<std::size_t>(u)])];
      if (d <= delta_) {
        delta_ = d;
        u_out_ = u;
        result = 2;
      }
    }
    if (result == 1) {
      u_in_ = first;
      v_in_ = second;
    } else {
      u_in_ = second;
      v_in_ = first;
    }
    return result != 0;
  }

  void change_flow() {
    if (delta_ > 0.0) {
      flow_[static_cast<std::size_t>(in_arc_)] += delta_;
      for (int u = arc_source(in_arc_); u != join_; u = parent_[static_cast<std::size_t>(u)])
        flow_[static_cast<std::size_t>(pred_[static_cast<std::size_t>(u)])] +=
            forward_[static_cast<std::size_t>(u)] ? -delta_ : delta_;
      for (int u = arc_target(in_arc_); u != join_; u = parent_[static_cast<std::size_t>(u)])
        flow_[static_cast<std::size_t>(pred_[static_cast<std::size_t>(u)])] +=
            forward_[static_cast<std::size_t>(u)] ? delta_ : -delta_;
    }
    state_[static_cast<std::size_t>(in_arc_)] = STATE_TREE;
    const std::int64_t out_arc = pred_[static_cast<std::size_t>(u_out_)];
    flow_[static_cast<std::size_t>(out_arc)] = 0.0;
    state_[static_cast<std::size_t>(out_arc)] = STATE_LOWER;
  }

  void update_tree() {
    const int v_out = parent_[static_cast<std::size_t>(u_out_)];
    const int old_rev_thread = rev_thread_[static_cast<std::size_t>(u_out_)];
    const int old_succ_num = succ_num_[static_cast<std::size_t>(u_out_)];
    const int old_last_succ = last_succ_[static_cast<std::size_t>(u_out_)];
    int u = last_succ_[static_cast<std::size_t>(u_in_)];
    int right = thread_[static_cast<std::size_t>(u)];
    int last;
    if (old_rev_thread == v_in_)
      last = thread_[static_cast<std::size_t>(old_last_succ)];
    else
      last = thread_[static_cast<std::size_t>(v_in_)];

    // Reroot the detached subtree at u_in: walk the stem u_in .. u_out,
    // reversing parent pointers and splicing each stem node's subtree into
    // the thread list right after its new parent.
    thread_[static_cast<std::size_t>(v_in_)] = u_in_;
    dirty_revs_.clear();
    dirty_revs_.push_back(v_in_);
    int stem = u_in_;
    int par_stem = v_in_;
    while (stem != u_out_) {
      const int new_stem = parent_[static_cast<std::size_t>(stem)];
      thread_[static_cast<std::size_t>(u)] = new_stem;
      dirty_revs_.push_back(u);

      const int w = rev_thread_[static_cast<std::size_t>(stem)];
      thread_[static_cast<std::size_t>(w)] = right;
      rev_thread_[static_cast<std::size_t>(right)] = w;

      parent_[static_cast<std::size_t>(stem)] = par_stem;
      par_stem = stem;
      stem = new_stem;

      u = last_succ_[static_cast<std::size_t>(stem)] ==
                  last_succ_[static_cast<std::size_t>(par_stem)]
              ? rev_thread_[static_cast<std::size_t>(par_stem)]
              : last_succ_[static_cast<std::size_t>(stem)];
      right = thread_[static_cast<std::size_t>(u)];
    }
    parent_[static_cast<std::size_t>(u_out_)] = par_stem;
    thread_[static_cast<std::size_t>(u)] = last;
    rev_thread_[static_cast<std::size_t>(last)] = u;
    last_succ_[static_cast<std::size_t>(u_out_)] = u;

    if (old_rev_thread != v_in_) {
      thread_[static_cast<std::size_t>(old_rev_thread)] = right;
      rev_thread_[static_cast<std::size_t>(right)] = old_rev_thread;
    }
    for (int d : dirty_revs_)
      rev_thread_[static_cast<std::size_t>(thread_[static_cast<std::size_t>(d)])] = d;

    // Pred arcs, orientations, subtree counts and last-successor marks flip
    // along the stem; counts accumulate as the stem unwinds toward u_in.
    int tmp_sc = 0;
    const int tmp_ls = last_succ_[static_cast<std::size_t>(u_out_)];
    u = u_out_;
    while (u != u_in_) {
      const int w = parent_[static_cast<std::size_t>(u)];
      pred_[static_cast<std::size_t>(u)] = pred_[static_cast<std::size_t>(w)];
      forward_[static_cast<std::size_t>(u)] = !forward_[static_cast<std::size_t>(w)];
      tmp_sc += succ_num_[static_cast<std::size_t>(u)] - succ_num_[static_cast<std::size_t>(w)];
      succ_num_[static_cast<std::size_t>(u)] = tmp_sc;
      last_succ_[static_cast<std::size_t>(w)] = tmp_ls;
      u = w;
    }
    pred_[static_cast<std::size_t>(u_in_)] = in_arc_;
    forward_[static_cast<std::size_t>(u_in_)] = (u_in_ == arc_source(in_arc_));
    succ_num_[static_cast<std::size_t>(u_in_)] = old_succ_num;

    int up_limit_in = -1;
    int up_limit_out = -1;
    if (last_succ_[static_cast<std::size_t>(join_)] == v_in_)
      up_limit_out = join_;
    else
      up_limit_in = join_;

    for (u = v_in_; u != up_limit_in && last_succ_[static_cast<std::size_t>(u)] == v_in_;
         u = parent_[static_cast<std::size_t>(u)])
      last_succ_[static_cast<std::size_t>(u)] = last_succ_[static_cast<std::size_t>(u_out_)];

    if (join_ != old_rev_thread && v_in_ != old_rev_thread) {
      for (u = v_out; u != up_limit_out &&
                      last_succ_[static_cast<std::size_t>(u)] == old_last_succ;
           u = parent_[static_cast<std::size_t>(u)])
        last_succ_[static_cast<std::size_t>(u)] = old_rev_thread;
    } else {
      for (u = v_out; u != up_limit_out &&
                      last_succ_[static_cast<std::size_t>(u)] == old_last_succ;
           u = parent_[static_cast<std::size_t>(u)])
        last_succ_[static_cast<std::size_t>(u)] = last_succ_[static_cast<std::size_t>(u_out_)];
    }

    for (u = v_in_; u != join_; u = parent_[static_cast<std::size_t>(u)])
      succ_num_[static_cast<std::size_t>(u)] += old_succ_num;
    for (u = v_out; u != join_; u = parent_[static_cast<std::size_t>(u)])
      succ_num_[static_cast<std::size_t>(u)] -= old_succ_num;
  }

  void update_potentials() {
    const double sigma =
        forward_[static_cast<std::size_t>(u_in_)]
            ? pi_[static_cast<std::size_t>(v_in_)] - pi_[static_cast<std::size_t>(u_in_)] -
                  cost_[static_cast<std::size_t>(pred_[static_cast<std::size_t>(u_in_)])]
            : pi_[static_cast<std::size_t>(v_in_)] - pi_[static_cast<std::size_t>(u_in_)] +
                  cost_[static_cast<std::size_t>(pred_[static_cast<std::size_t>(u_in_)])];
    const int end = thread_[static_cast<std::size_t>(last_succ_[static_cast<std::size_t>(u_in_)])];
    for (int u = u_in_; u != end; u = thread_[static_cast<std::size_t>(u)])
      pi_[static_cast<std::size_t>(u)] += sigma;
  }

  int m_;
  int n_;
  std::int64_t real_arcs_;
  std::int64_t all_arcs_;
  int root_;

  std::vector<double> cost_;
  std::vector<double> flow_;
  std::vector<signed char> state_;
  std::vector<double> pi_;
  std::vector<int> parent_;
  std::vector<std::int64_t> pred_;
  std::vector<int> thread_;
  std::vector<int> rev_thread_;
  std::vector<int> succ_num_;
  std::vector<int> last_succ_;
  std::vector<bool> forward_;
  std::vector<int> dirty_revs_;

  std::int64_t next_arc_ = 0;
  std::int64_t block_size_ = 16;
  std::int64_t in_arc_ = 0;
  int join_ = 0;
  int u_in_ = 0;
  int v_in_ = 0;
  int u_out_ = 0;
  double delta_ = 0.0;
};

}  // namespace wrf::detail
