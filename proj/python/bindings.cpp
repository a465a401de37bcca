#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <string>
#include <tuple>
#include <vector>

#include "textscene/captions.hpp"
#include "textscene/error.hpp"
#include "textscene/kg.hpp"
#include "textscene/retrieval.hpp"
#include "textscene/sce.hpp"
#include "textscene/tokenize.hpp"

namespace py = pybind11;
using namespace textscene;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_matrix(const Array& a) {
  if (a.ndim() == 1) return Tensor(Shape{1, static_cast<std::size_t>(a.shape(0))}, {a.data(), a.data() + a.size()});
  if (a.ndim() != 2) throw UsageError("expected a 1-D or 2-D array");
  return Tensor(Shape{static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))},
                {a.data(), a.data() + a.size()});
}

std::vector<double> to_vector(const Array& a) {
  if (a.ndim() != 1) throw UsageError("expected a 1-D array");
  return {a.data(), a.data() + a.size()};
}

Array make_array(std::vector<py::ssize_t> shape, const std::vector<double>& data) {
  Array a(shape);
  std::copy(data.begin(), data.end(), a.mutable_data());
  return a;
}

Array from_tensor(const Tensor& t, bool flat = false) {
  if (flat) return make_array({static_cast<py::ssize_t>(t.size())}, t.data);
  return make_array({static_cast<py::ssize_t>(t.rows()), static_cast<py::ssize_t>(t.cols())}, t.data);
}

Array from_vector(const std::vector<double>& v) { return make_array({static_cast<py::ssize_t>(v.size())}, v); }

SceneAnnotation annotation_from(const py::dict& d) {
  SceneAnnotation a;
  if (d.contains("sample_id")) a.sample_id = d["sample_id"].cast<std::string>();
  a.base_caption = d["base_caption"].cast<std::string>();
  if (d.contains("object_counts")) {
    for (auto item : d["object_counts"]) {
      auto pair = item.cast<std::tuple<std::string, std::size_t>>();
      a.object_counts.push_back({std::get<0>(pair), std::get<1>(pair)});
    }
  }
  if (d.contains("qa_pairs")) {
    for (auto item : d["qa_pairs"]) {
      auto pair = item.cast<std::tuple<std::string, std::string>>();
      a.qa_pairs.push_back({std::get<0>(pair), std::get<1>(pair)});
    }
  }
  return a;
}

std::vector<TripleRecord> records_from(const std::vector<std::tuple<std::string, std::string, std::string>>& t) {
  std::vector<TripleRecord> out;
  for (std::size_t i = 0; i < t.size(); ++i) {
    out.push_back({std::get<0>(t[i]), std::get<1>(t[i]), std::get<2>(t[i]), i + 1});
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Text-to-scene retrieval core";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<UsageError>(m, "UsageError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());

  m.def("tokenize", &tokenize);
  m.def("softmax", [](const Array& v) { return from_vector(ad::softmax(to_vector(v))); });
  m.def("cosine_sim", [](const Array& a, const Array& b) { return ad::cosine_sim(to_vector(a), to_vector(b)); });

  m.def("score_transe", [](const Array& h, const Array& r, const Array& t, int p) {
    return score_transe(to_vector(h), to_vector(r), to_vector(t), p);
  }, py::arg("h"), py::arg("r"), py::arg("t"), py::arg("p") = 2);
  m.def("score_distmult", [](const Array& h, const Array& r, const Array& t) {
    return score_distmult(to_vector(h), to_vector(r), to_vector(t));
  });

  // Trains on in-memory triples and returns filtered link-prediction metrics
  // over the same triples together with the embedding tables.
  m.def("train_kge", [](const std::vector<std::tuple<std::string, std::string, std::string>>& triples,
                        const std::string& scorer, std::size_t dim, std::size_t iterations, double lr,
                        std::uint64_t seed) {
    const auto g = load_graph(records_from(triples));
    KgeTrainConfig cfg;
    cfg.scorer = parse_scorer(scorer);
    cfg.dim = dim;
    cfg.iterations = iterations;
    cfg.learning_rate = lr;
    cfg.seed = seed;
    const auto r = train_kge(g.graph, cfg);
    const auto lp = evaluate_link_prediction(r.model, g.graph, g.graph.triples());
    py::dict out;
    out["entities"] = g.graph.entities();
    out["relations"] = g.graph.relations();
    out["entity_embeddings"] = from_tensor(r.model.entity_embeddings);
    out["relation_embeddings"] = from_tensor(r.model.relation_embeddings);
    out["mrr"] = lp.mrr;
    out["hits_at_1"] = lp.hits_at_1;
    out["hits_at_10"] = lp.hits_at_10;
    return out;
  }, py::arg("triples"), py::arg("scorer") = "distmult", py::arg("dim") = 32, py::arg("iterations") = 2000,
     py::arg("learning_rate") = 0.25, py::arg("seed") = 0);

  m.def("sce_reproject", [](const Array& sequence, const Array& codebook) {
    ad::Tape tape;
    const auto s = to_matrix(sequence);
    const auto c = to_matrix(codebook);
    const auto out = sce_reproject(tape.view(s), tape.view(c));
    return py::make_tuple(from_tensor(out.weights.value(), true), from_tensor(out.reprojected.value()),
                          from_tensor(out.pooled.value(), true));
  }, py::arg("sequence"), py::arg("codebook"));

  m.def("contrastive_loss", [](const Array& bev, const Array& text, double tau) {
    ad::Tape tape;
    const auto b = to_matrix(bev);
    const auto t = to_matrix(text);
    const auto l = contrastive_loss(tape.view(b), tape.view(t), tau);
    return py::make_tuple(l.text_to_scene.item(), l.scene_to_text.item(), l.total.item());
  }, py::arg("bev_pooled"), py::arg("text_pooled"), py::arg("temperature") = 0.07);

  m.def("total_loss", py::overload_cast<double, double, double>(&total_loss));

  m.def("quantity_descriptor", &quantity_descriptor);
  m.def("pluralize", &pluralize);
  m.def("build_caption", [](const py::dict& ann, const std::string& level) {
    return build_caption(annotation_from(ann), parse_level(level));
  }, py::arg("annotation"), py::arg("level") = "easy");

  py::class_<RetrievalIndex>(m, "RetrievalIndex")
      .def(py::init([](const std::vector<std::string>& ids, const Array& vectors) {
        const auto t = to_matrix(vectors);
        if (t.rows() != ids.size()) throw UsageError("one id per row required");
        std::vector<std::pair<std::string, std::vector<double>>> entries;
        for (std::size_t i = 0; i < ids.size(); ++i) {
          const auto r = t.row(i);
          entries.emplace_back(ids[i], std::vector<double>(r.begin(), r.end()));
        }
        return build_index(entries);
      }), py::arg("ids"), py::arg("vectors"))
      .def("__len__", &RetrievalIndex::size)
      .def_property_readonly("ids", &RetrievalIndex::ids)
      .def("vector", [](const RetrievalIndex& idx, std::size_t i) {
        if (i >= idx.size()) throw py::index_error();
        const auto v = idx.vector(i);
        return from_vector({v.begin(), v.end()});
      })
      .def("query", [](const RetrievalIndex& idx, const Array& q, std::size_t k) {
        std::vector<std::pair<std::string, double>> out;
        for (const auto& e : query_topk(idx, to_vector(q), k).entries) out.emplace_back(e.id, e.score);
        return out;
      }, py::arg("query"), py::arg("k") = 10);

  m.def("recall_at_k", [](const std::vector<std::pair<std::string, std::vector<std::string>>>& ranked,
                          const std::map<std::string, std::vector<std::string>>& truth,
                          const std::vector<std::size_t>& ks) {
    std::vector<RankedList> lists;
    for (const auto& [q, ids] : ranked) {
      RankedList l{q, {}};
      for (const auto& id : ids) l.entries.push_back({id, 0.0});
      lists.push_back(std::move(l));
    }
    RelevanceMap rel;
    for (const auto& [q, ids] : truth) rel[q] = {ids.begin(), ids.end()};
    return recall_at_k(lists, rel, ks);
  }, py::arg("ranked"), py::arg("truth"), py::arg("ks") = std::vector<std::size_t>{1, 5, 10});

  py::class_<AlignModel>(m, "AlignModel")
      .def_static("load", &load_align, py::arg("directory"))
      .def_property_readonly("use_kgp", [](const AlignModel& a) { return a.use_kgp; })
      .def_property_readonly("vocab_size", [](const AlignModel& a) { return a.vocab.size(); })
      .def("embed_text", [](const AlignModel& a, const std::string& caption) {
        return from_vector(embed_text(a, caption));
      })
      .def("embed_scene", [](const AlignModel& a, const Array& bev) {
        return from_vector(embed_scene(a, to_matrix(bev)));
      })
      .def("evaluate", [](const AlignModel& a, const std::string& corpus_dir) {
        const auto mtr = evaluate_bidirectional(a, load_corpus(corpus_dir));
        return py::dict(py::arg("text_retrieval") = mtr.text_retrieval,
                        py::arg("scene_retrieval") = mtr.scene_retrieval, py::arg("pool_size") = mtr.pool_size);
      });

  // Generates a synthetic corpus in memory and trains an alignment model on it.
  m.def("train_synthetic", [](std::size_t classes, std::size_t samples_per_class, std::size_t epochs,
                              std::size_t batch_size, double lambda, std::uint64_t seed,
                              const std::string& out_dir) {
    SynthSpec spec;
    spec.num_classes = classes;
    spec.samples_per_class = samples_per_class;
    spec.seed = seed;
    const auto sc = synth_corpus(spec);
    AlignTrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = batch_size;
    cfg.lambda = lambda;
    cfg.seed = seed;
    cfg.use_kgp = false;
    auto r = train_align(sc.corpus, {}, cfg);
    if (!out_dir.empty()) {
      save_align(out_dir, r.model);
      save_corpus(out_dir + "/corpus", sc.corpus);
    }
    std::vector<double> totals;
    for (const auto& e : r.log) totals.push_back(e.total);
    return py::make_tuple(std::move(r.model), totals);
  }, py::arg("classes") = 8, py::arg("samples_per_class") = 4, py::arg("epochs") = 10,
     py::arg("batch_size") = 8, py::arg("lam") = 0.15, py::arg("seed") = 0, py::arg("out_dir") = "");
}
