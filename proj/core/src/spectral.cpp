#include "optlens/spectral.hpp"

#include <cmath>
#include <ostream>

#include <json.hpp>

#include "optlens/config.hpp"
#include "optlens/errors.hpp"

namespace optlens::spectral {

namespace {

void require_nonzero(const linalg::SingularSpectrum& s) {
  if (s.values.empty() || !(s.largest() > 0.0)) {
    throw DegenerateInputError("rank of an all-zero spectrum is undefined");
  }
}

}  // namespace

double stable_rank(const linalg::SingularSpectrum& s) {
  require_nonzero(s);
  const double s1 = s.largest();
  double sum = 0.0;
  for (double v : s.values) {
    const double r = v / s1;
    sum += r * r;
  }
  return sum;
}

double effective_rank(const linalg::SingularSpectrum& s) {
  require_nonzero(s);
  const auto clamped = linalg::clamp_dust(s);
  double total = 0.0;
  for (double v : clamped.values) {
    total += v;
  }
  double h = 0.0;
  for (double v : clamped.values) {
    if (v > 0.0) {
      const double p = v / total;
      h -= p * std::log(p);
    }
  }
  return std::exp(h);
}

std::string_view kind_name(Kind k) { return k == Kind::kWeight ? "weight" : "representation"; }

Entry analyse(const std::string& layer, Kind kind, const Matrix& m) {
  linalg::require_finite(m, layer);
  const auto s = linalg::singular_values(m);
  return {layer, kind, stable_rank(s), effective_rank(s), std::min(m.rows(), m.cols())};
}

SpectralProfile weight_profile(const NamedParamSet& params) {
  SpectralProfile p;
  for (const auto& [name, t] : params) {
    if (t.is_matrix()) {
      p.entries.push_back(analyse(name, Kind::kWeight, t.as_matrix()));
    }
  }
  if (p.entries.empty()) {
    throw DegenerateInputError("checkpoint has no weight matrices");
  }
  return p;
}

SpectralProfile representation_profile(const NamedParamSet& params, const models::ModelSpec& spec,
                                       std::span<const models::PointCloud> clouds) {
  if (clouds.size() < 2) {
    throw DegenerateInputError("representation ranks need at least 2 samples");
  }
  SpectralProfile p;
  for (const auto& layer : models::capture_layers(params, spec, clouds)) {
    p.entries.push_back(analyse(layer.layer, Kind::kRepresentation, layer.features));
  }
  return p;
}

SpectralProfile interleave(const SpectralProfile& weights, const SpectralProfile& representations) {
  SpectralProfile out;
  std::vector<bool> placed(representations.entries.size(), false);
  const auto owns = [](const std::string& layer, const std::string& param) {
    return param.size() > layer.size() && param.compare(0, layer.size(), layer) == 0 && param[layer.size()] == '.';
  };
  for (std::size_t i = 0; i < weights.entries.size(); ++i) {
    out.entries.push_back(weights.entries[i]);
    for (std::size_t r = 0; r < representations.entries.size(); ++r) {
      const auto& layer = representations.entries[r].layer;
      if (placed[r] || !owns(layer, weights.entries[i].layer)) {
        continue;
      }
      const bool last = i + 1 == weights.entries.size() || !owns(layer, weights.entries[i + 1].layer);
      if (last) {
        out.entries.push_back(representations.entries[r]);
        placed[r] = true;
      }
    }
  }
  for (std::size_t r = 0; r < representations.entries.size(); ++r) {
    if (!placed[r]) {
      out.entries.push_back(representations.entries[r]);
    }
  }
  return out;
}

void write_csv(const SpectralProfile& p, std::ostream& out) {
  out << "layer,kind,stable_rank,effective_rank,bound\n";
  for (const auto& e : p.entries) {
    out << e.layer << ',' << kind_name(e.kind) << ',' << harness::format_double(e.stable_rank) << ','
        << harness::format_double(e.effective_rank) << ',' << e.bound << '\n';
  }
}

std::string to_json(const SpectralProfile& p, const std::string& checkpoint_id, const std::string& subset_id) {
  nlohmann::ordered_json j;
  j["checkpoint_id"] = checkpoint_id;
  j["subset_id"] = subset_id;
  auto entries = nlohmann::ordered_json::array();
  for (const auto& e : p.entries) {
    nlohmann::ordered_json x;
    x["layer"] = e.layer;
    x["kind"] = std::string(kind_name(e.kind));
    x["stable_rank"] = e.stable_rank;
    x["effective_rank"] = e.effective_rank;
    x["bound"] = e.bound;
    entries.push_back(x);
  }
  j["entries"] = entries;
  return j.dump(2) + "\n";
}

}  // namespace optlens::spectral
