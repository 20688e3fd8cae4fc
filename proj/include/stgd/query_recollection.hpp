#ifndef STGD_QUERY_RECOLLECTION_HPP
#define STGD_QUERY_RECOLLECTION_HPP

#include <vector>

#include "stgd/selection.hpp"
#include "stgd/tensor.hpp"

namespace stgd {

enum class QuerySource { kEncoder, kRecollected };

// Decoder-input query set: the top current-frame proposals plus the
// top-scored predictions recollected from the previous frame. Size is
// n_p + n_res in every frame, first frame included.
struct QueryInit {
  std::vector<BevBox3D> boxes;
  std::vector<double> scores;
  Tensor embeddings;  // [n_p + n_res, C] once encoded
  std::vector<QuerySource> provenance;

  std::size_t size() const { return boxes.size(); }
};

struct PeConfig {
  double span_xy = 50.0;   // normalization half-extents, meters
  double span_z = 5.0;
  double span_size = 10.0;
  std::size_t frequencies = 4;

  std::size_t feature_width() const { return 9 * 2 * frequencies; }
};

// Fixed sinusoidal features of the normalized vector
// (x, y, z, l, w, h, sin heading, cos heading, score); one row per query.
Tensor pe_features(const std::vector<BevBox3D>& boxes, const std::vector<double>& scores,
                   const PeConfig& cfg);

void init_pe_params(ParamStore& store, const PeConfig& cfg, std::size_t embed_dim);

// PE(b, s): sinusoidal features through the learnable linear map.
Var position_encode(Tape& tape, Var pe_proj, const std::vector<BevBox3D>& boxes,
                    const std::vector<double>& scores, const PeConfig& cfg);

// Builds the decoder-input set: top n_p proposals by score plus top n_res
// previous predictions; short histories pad from the next-best proposals so
// the query count never varies. Throws (with counts) when the proposals
// cannot cover n_p plus the required padding.
QueryInit recollect(const QuerySet& prev_pred, const QuerySet& proposals, std::size_t n_p,
                    std::size_t n_res);

}  // namespace stgd

#endif  // STGD_QUERY_RECOLLECTION_HPP
