#include "flsim/partition.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "flsim/rng.hpp"

namespace flsim::partition {

namespace {

std::vector<std::vector<long>> indices_by_class(const Dataset& data) {
  std::vector<std::vector<long>> by_class(data.num_classes);
  for (long i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(i);
  return by_class;
}

/// Split `total` into integer counts proportional to `proportions` using the
/// largest-remainder method. Exact: counts sum to total. Ties go to the
/// lower index.
std::vector<long> largest_remainder(const std::vector<double>& proportions, long total) {
  const std::size_t n = proportions.size();
  std::vector<long> counts(n);
  std::vector<std::pair<double, std::size_t>> remainders(n);
  long assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ideal = proportions[i] * static_cast<double>(total);
    counts[i] = static_cast<long>(std::floor(ideal));
    assigned += counts[i];
    remainders[i] = {ideal - static_cast<double>(counts[i]), i};
  }
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (long r = 0; r < total - assigned; ++r) counts[remainders[r % n].second] += 1;
  return counts;
}

void ensure_nonempty_clients(Partition& part) {
  for (std::size_t i = 0; i < part.assignments.size(); ++i) {
    while (part.assignments[i].empty()) {
      std::size_t largest = 0;
      for (std::size_t j = 1; j < part.assignments.size(); ++j)
        if (part.assignments[j].size() > part.assignments[largest].size()) largest = j;
      if (part.assignments[largest].size() <= 1)
        throw std::runtime_error("partition: pool too small to give every client a sample");
      part.assignments[i].push_back(part.assignments[largest].back());
      part.assignments[largest].pop_back();
    }
  }
}

void check_basic(const Dataset& data, int n_clients) {
  if (n_clients < 1) throw std::invalid_argument("partition: n_clients must be >= 1");
  if (data.size() < n_clients)
    throw std::invalid_argument("partition: fewer samples than clients");
}

}  // namespace

void PartitionSpec::validate(int num_classes, int n_clients) const {
  switch (kind) {
    case PartitionKind::Iid:
      break;
    case PartitionKind::Dir:
    case PartitionKind::Qs:
      if (degree <= 0.0)
        throw std::invalid_argument("partition spec: Dirichlet beta must be > 0");
      break;
    case PartitionKind::Prob: {
      const int groups = std::min(n_clients, num_classes);
      if (degree <= 1.0 / static_cast<double>(groups) || degree > 1.0)
        throw std::invalid_argument("partition spec: q must be in (1/G, 1]");
      break;
    }
    case PartitionKind::Qty: {
      const long c = std::lround(degree);
      if (c < 1 || c > num_classes)
        throw std::invalid_argument("partition spec: classes per client out of range");
      break;
    }
    case PartitionKind::Noise:
      if (degree < 0.0) throw std::invalid_argument("partition spec: sigma must be >= 0");
      break;
  }
}

Dataset generate_synthetic(int num_classes, int dims, int per_class,
                           double separation, std::uint64_t seed) {
  if (num_classes < 1 || dims < 1 || per_class < 1 || separation <= 0.0)
    throw std::invalid_argument("generate_synthetic: all arguments must be positive");
  Rng rng(seed);

  // Class means by rejection: redraw until the new mean clears `separation`
  // from every earlier one, widening the proposal radius when stuck.
  std::vector<Eigen::VectorXd> means;
  means.reserve(num_classes);
  double radius = separation;
  for (int c = 0; c < num_classes; ++c) {
    for (int attempt = 0;; ++attempt) {
      Eigen::VectorXd m(dims);
      for (int d = 0; d < dims; ++d) m[d] = rng.normal() * radius;
      bool ok = true;
      for (const auto& prev : means)
        if ((m - prev).norm() < separation) {
          ok = false;
          break;
        }
      if (ok) {
        means.push_back(std::move(m));
        break;
      }
      if (attempt > 0 && attempt % 64 == 0) radius *= 1.5;
    }
  }

  Dataset data;
  data.num_classes = num_classes;
  data.features.resize(static_cast<long>(num_classes) * per_class, dims);
  data.labels.resize(static_cast<long>(num_classes) * per_class);
  long row = 0;
  for (int c = 0; c < num_classes; ++c) {
    for (int s = 0; s < per_class; ++s, ++row) {
      for (int d = 0; d < dims; ++d) data.features(row, d) = means[c][d] + rng.normal();
      data.labels[row] = c;
    }
  }
  return data;
}

Partition partition_iid(const Dataset& data, int n_clients, std::uint64_t seed) {
  check_basic(data, n_clients);
  Rng rng(seed);
  Partition part;
  part.assignments.resize(n_clients);

  // Stratified deal: shuffle within each class, then deal round-robin with a
  // cursor carried across classes. Client sizes differ by at most one and
  // per-class counts per client differ by at most one.
  auto by_class = indices_by_class(data);
  std::size_t cursor = rng.uniform_int(n_clients);
  for (auto& cls : by_class) {
    std::vector<std::size_t> perm = rng.permutation(cls.size());
    for (std::size_t j = 0; j < cls.size(); ++j) {
      part.assignments[cursor].push_back(cls[perm[j]]);
      cursor = (cursor + 1) % n_clients;
    }
  }
  return part;
}

Partition partition_dir(const Dataset& data, int n_clients, double beta, std::uint64_t seed) {
  check_basic(data, n_clients);
  if (beta <= 0.0) throw std::invalid_argument("partition_dir: beta must be > 0");
  Rng rng(seed);
  Partition part;
  part.assignments.resize(n_clients);

  auto by_class = indices_by_class(data);
  for (auto& cls : by_class) {
    std::vector<double> p = rng.dirichlet(beta, n_clients);
    std::vector<long> counts = largest_remainder(p, static_cast<long>(cls.size()));
    std::vector<std::size_t> perm = rng.permutation(cls.size());
    std::size_t pos = 0;
    for (int i = 0; i < n_clients; ++i)
      for (long k = 0; k < counts[i]; ++k) part.assignments[i].push_back(cls[perm[pos++]]);
  }
  ensure_nonempty_clients(part);
  return part;
}

Partition partition_prob(const Dataset& data, int n_clients, double q, std::uint64_t seed) {
  check_basic(data, n_clients);
  const int groups = std::min(n_clients, data.num_classes);
  if (n_clients % groups != 0)
    throw std::invalid_argument("partition_prob: n_clients must be divisible by the group count");
  if (q <= 1.0 / static_cast<double>(groups) || q > 1.0)
    throw std::invalid_argument("partition_prob: q must be in (1/G, 1]");
  Rng rng(seed);
  Partition part;
  part.assignments.resize(n_clients);

  // Clients join groups round-robin; a label's primary group is label mod G.
  std::vector<std::vector<int>> members(groups);
  for (int i = 0; i < n_clients; ++i) members[i % groups].push_back(i);
  std::vector<std::size_t> turn(groups, 0);

  for (long i = 0; i < data.size(); ++i) {
    const int primary = data.labels[i] % groups;
    int g = primary;
    if (rng.uniform() >= q) {
      std::uint64_t other = rng.uniform_int(groups - 1);
      g = static_cast<int>(other < static_cast<std::uint64_t>(primary) ? other : other + 1);
    }
    const int client = members[g][turn[g] % members[g].size()];
    turn[g] += 1;
    part.assignments[client].push_back(i);
  }
  return part;
}

Partition partition_qty(const Dataset& data, int n_clients, int classes_per_client,
                        std::uint64_t seed) {
  check_basic(data, n_clients);
  const int C = data.num_classes;
  if (classes_per_client < 1 || classes_per_client > C)
    throw std::invalid_argument("partition_qty: classes per client out of range");
  if (static_cast<long>(classes_per_client) * n_clients < C)
    throw std::invalid_argument("partition_qty: not every class can be owned");
  Rng rng(seed);

  // Draw c distinct labels per client, retrying until every class is owned;
  // after bounded retries, repair by swapping over-owned labels for missing
  // ones.
  std::vector<std::vector<int>> owned(n_clients);
  bool covered = false;
  for (int attempt = 0; attempt < 1000 && !covered; ++attempt) {
    std::vector<long> owners(C, 0);
    for (int i = 0; i < n_clients; ++i) {
      std::vector<std::size_t> pick =
          rng.sample_without_replacement(C, classes_per_client);
      owned[i].assign(pick.begin(), pick.end());
      std::sort(owned[i].begin(), owned[i].end());
      for (int cls : owned[i]) owners[cls] += 1;
    }
    covered = std::all_of(owners.begin(), owners.end(), [](long v) { return v > 0; });
  }
  if (!covered) {
    std::vector<long> owners(C, 0);
    for (const auto& labels : owned)
      for (int cls : labels) owners[cls] += 1;
    for (int missing = 0; missing < C; ++missing) {
      while (owners[missing] == 0) {
        for (int i = 0; i < n_clients; ++i) {
          auto it = std::find_if(owned[i].begin(), owned[i].end(), [&](int cls) {
            return owners[cls] > 1;
          });
          if (it != owned[i].end() &&
              std::find(owned[i].begin(), owned[i].end(), missing) == owned[i].end()) {
            owners[*it] -= 1;
            *it = missing;
            owners[missing] += 1;
            std::sort(owned[i].begin(), owned[i].end());
            break;
          }
        }
      }
    }
  }

  Partition part;
  part.assignments.resize(n_clients);
  auto by_class = indices_by_class(data);
  for (int cls = 0; cls < C; ++cls) {
    std::vector<int> holders;
    for (int i = 0; i < n_clients; ++i)
      if (std::find(owned[i].begin(), owned[i].end(), cls) != owned[i].end())
        holders.push_back(i);
    std::vector<std::size_t> perm = rng.permutation(by_class[cls].size());
    for (std::size_t j = 0; j < perm.size(); ++j)
      part.assignments[holders[j % holders.size()]].push_back(by_class[cls][perm[j]]);
  }
  return part;
}

Partition partition_noise(const Dataset& data, int n_clients, double sigma,
                          std::uint64_t seed) {
  if (sigma < 0.0) throw std::invalid_argument("partition_noise: sigma must be >= 0");
  Partition part = partition_iid(data, n_clients, seed);
  part.noise_seed = seed;
  part.noise_std.resize(n_clients);
  // Client u_i (1-based) gets std sigma * i / N.
  for (int i = 0; i < n_clients; ++i)
    part.noise_std[i] = sigma * static_cast<double>(i + 1) / static_cast<double>(n_clients);
  return part;
}

Partition partition_qs(const Dataset& data, int n_clients, double beta, std::uint64_t seed) {
  check_basic(data, n_clients);
  if (beta <= 0.0) throw std::invalid_argument("partition_qs: beta must be > 0");
  Rng rng(seed);
  const long total = data.size();

  std::vector<long> sizes;
  for (int attempt = 0; attempt < 20; ++attempt) {
    std::vector<double> p = rng.dirichlet(beta, n_clients);
    sizes = largest_remainder(p, total);
    if (std::all_of(sizes.begin(), sizes.end(), [](long s) { return s >= 1; })) break;
    sizes.clear();
  }
  if (sizes.empty()) {
    // Floor each client at one sample, taking from the largest.
    std::vector<double> p = rng.dirichlet(beta, n_clients);
    sizes = largest_remainder(p, total);
    for (int i = 0; i < n_clients; ++i) {
      while (sizes[i] < 1) {
        int largest = static_cast<int>(
            std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
        sizes[largest] -= 1;
        sizes[i] += 1;
      }
    }
  }

  // Stratified deck: shuffle within class, then interleave classes so any
  // contiguous run mirrors the global label proportions; cut runs of the
  // drawn sizes.
  auto by_class = indices_by_class(data);
  for (auto& cls : by_class) {
    std::vector<std::size_t> perm = rng.permutation(cls.size());
    std::vector<long> shuffled(cls.size());
    for (std::size_t j = 0; j < cls.size(); ++j) shuffled[j] = cls[perm[j]];
    cls = std::move(shuffled);
  }
  std::vector<long> deck;
  deck.reserve(total);
  std::vector<std::size_t> taken(by_class.size(), 0);
  for (long t = 1; t <= total; ++t) {
    // Pick the class furthest behind its expected share at position t.
    int best = -1;
    double best_deficit = -1.0;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
      if (taken[c] >= by_class[c].size()) continue;
      const double expected = static_cast<double>(by_class[c].size()) *
                              static_cast<double>(t) / static_cast<double>(total);
      const double deficit = expected - static_cast<double>(taken[c]);
      if (deficit > best_deficit) {
        best_deficit = deficit;
        best = static_cast<int>(c);
      }
    }
    deck.push_back(by_class[best][taken[best]++]);
  }

  Partition part;
  part.assignments.resize(n_clients);
  long pos = 0;
  for (int i = 0; i < n_clients; ++i) {
    part.assignments[i].assign(deck.begin() + pos, deck.begin() + pos + sizes[i]);
    pos += sizes[i];
  }
  return part;
}

Partition make_partition(const Dataset& data, const PartitionSpec& spec, int n_clients,
                         std::uint64_t seed) {
  spec.validate(data.num_classes, n_clients);
  switch (spec.kind) {
    case PartitionKind::Iid:
      return partition_iid(data, n_clients, seed);
    case PartitionKind::Dir:
      return partition_dir(data, n_clients, spec.degree, seed);
    case PartitionKind::Prob:
      return partition_prob(data, n_clients, spec.degree, seed);
    case PartitionKind::Qty:
      return partition_qty(data, n_clients, static_cast<int>(std::lround(spec.degree)), seed);
    case PartitionKind::Noise:
      return partition_noise(data, n_clients, spec.degree, seed);
    case PartitionKind::Qs:
      return partition_qs(data, n_clients, spec.degree, seed);
  }
  throw std::logic_error("make_partition: unknown kind");
}

nn::Batch client_batch(const Dataset& data, const Partition& part, int client) {
  if (client < 0 || client >= static_cast<int>(part.assignments.size()))
    throw std::invalid_argument("client_batch: client out of range");
  const auto& idx = part.assignments[client];
  nn::Batch batch;
  batch.features.resize(static_cast<long>(idx.size()), data.features.cols());
  batch.labels.resize(static_cast<long>(idx.size()));
  for (std::size_t r = 0; r < idx.size(); ++r) {
    batch.features.row(static_cast<long>(r)) = data.features.row(idx[r]);
    batch.labels[static_cast<long>(r)] = data.labels[idx[r]];
  }
  if (!part.noise_std.empty() && part.noise_std[client] > 0.0) {
    const double std_i = part.noise_std[client];
    for (std::size_t r = 0; r < idx.size(); ++r) {
      Rng rng(mix_seed(mix_seed(mix_seed(part.noise_seed, fnv1a64("noise")),
                                static_cast<std::uint64_t>(client)),
                       static_cast<std::uint64_t>(idx[r])));
      for (long d = 0; d < batch.features.cols(); ++d)
        batch.features(static_cast<long>(r), d) += std_i * rng.normal();
    }
  }
  return batch;
}

nn::Batch as_batch(const Dataset& data) {
  return nn::Batch{data.features, data.labels};
}

std::string partition_to_text(const Partition& part) {
  std::ostringstream out;
  out << "# flsim partition v1 clients=" << part.assignments.size() << "\n";
  if (!part.noise_std.empty()) {
    out << "# noise seed=" << part.noise_seed << " stds=";
    for (std::size_t i = 0; i < part.noise_std.size(); ++i) {
      if (i) out << ',';
      out.precision(17);
      out << part.noise_std[i];
    }
    out << "\n";
  }
  for (std::size_t i = 0; i < part.assignments.size(); ++i) {
    out << i;
    for (long idx : part.assignments[i]) out << ' ' << idx;
    out << "\n";
  }
  return out.str();
}

Partition partition_from_text(const std::string& text) {
  Partition part;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto seed_pos = line.find("seed=");
      if (seed_pos != std::string::npos) {
        std::istringstream hs(line.substr(seed_pos + 5));
        hs >> part.noise_seed;
        auto stds_pos = line.find("stds=");
        if (stds_pos != std::string::npos) {
          std::istringstream ss(line.substr(stds_pos + 5));
          std::string tok;
          while (std::getline(ss, tok, ',')) part.noise_std.push_back(std::stod(tok));
        }
      }
      continue;
    }
    std::istringstream ls(line);
    std::size_t client;
    ls >> client;
    if (part.assignments.size() <= client) part.assignments.resize(client + 1);
    long idx;
    while (ls >> idx) part.assignments[client].push_back(idx);
  }
  return part;
}

}  // namespace flsim::partition
