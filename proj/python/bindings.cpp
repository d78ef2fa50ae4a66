#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "adaptok/bpe.hpp"
#include "adaptok/cli.hpp"
#include "adaptok/corpus.hpp"
#include "adaptok/error.hpp"
#include "adaptok/fixture.hpp"
#include "adaptok/loss.hpp"
#include "adaptok/metrics.hpp"
#include "adaptok/rarity.hpp"
#include "adaptok/toymodel.hpp"
#include "adaptok/weighting.hpp"

namespace py = pybind11;
using namespace adaptok;

namespace {

FrequencyTable count_sentences(const std::vector<Sentence>& sentences, unsigned threads) {
  return count_frequencies(sentences, threads);
}

py::dict bleu_dict(const BleuReport& r) {
  py::dict d;
  d["score"] = r.score;
  d["precisions"] = std::vector<double>(r.precisions.begin(), r.precisions.end());
  d["brevity_penalty"] = r.brevity_penalty;
  d["hypothesis_length"] = r.hypothesis_length;
  d["reference_length"] = r.reference_length;
  d["summary"] = r.summary();
  return d;
}

std::vector<StepDistribution> steps_of(const std::vector<std::vector<double>>& logits,
                                       const std::vector<TokenId>& targets) {
  if (logits.size() != targets.size())
    throw Error("logits and targets differ in length");
  std::vector<StepDistribution> steps;
  for (std::size_t i = 0; i < logits.size(); ++i)
    steps.push_back(StepDistribution::from_logits(logits[i], targets[i]));
  return steps;
}

LossConfig make_loss(const std::string& mode, const std::vector<double>& weights, double gamma, bool plus_one,
                     double label_smoothing, double entropy_penalty) {
  LossConfig config;
  if (mode == "uniform")
    config = LossConfig::uniform(label_smoothing);
  else if (mode == "static")
    config = LossConfig::with_weights(std::make_shared<const std::vector<double>>(weights), label_smoothing);
  else if (mode == "focal")
    config = LossConfig::focal(gamma, plus_one, label_smoothing);
  else
    throw Error("loss mode must be uniform, static or focal");
  config.entropy_penalty = entropy_penalty;
  config.validate();
  return config;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Token-frequency adaptive training objectives";
  m.attr("__version__") = cli::version();
  py::register_exception<Error>(m, "AdaptokError", PyExc_ValueError);

  py::class_<FrequencyTable>(m, "FrequencyTable")
      .def_static("from_sentences", &count_sentences, py::arg("sentences"), py::arg("threads") = 1)
      .def_static("load_tsv", [](const std::string& path) { return FrequencyTable::load_tsv(path); })
      .def("count", [](const FrequencyTable& t, const std::string& token) { return t.count(token); })
      .def("rank_of", [](const FrequencyTable& t, const std::string& token) { return t.rank_of(token); })
      .def_property_readonly("total", &FrequencyTable::total)
      .def_property_readonly("median", &FrequencyTable::median)
      .def_property_readonly("max_count", &FrequencyTable::max_count)
      .def_property_readonly("num_types", &FrequencyTable::num_types)
      .def("ranked",
           [](const FrequencyTable& t) {
             std::vector<std::pair<std::string, std::uint64_t>> out;
             for (const auto& e : t.ranked())
               out.emplace_back(e.token, e.count);
             return out;
           })
      .def("to_tsv", &FrequencyTable::to_tsv);

  m.def("exponential_weight", &exponential_weight, py::arg("c"), py::arg("amplitude"), py::arg("temperature"));
  m.def("chi_square_weight", &chi_square_weight, py::arg("c"), py::arg("amplitude"), py::arg("temperature"));
  m.def(
      "calibrate_amplitude",
      [](const std::string& form, double T) { return calibrate_amplitude(parse_weight_form(form), T); },
      py::arg("form"), py::arg("temperature"));

  py::class_<WeightTable>(m, "WeightTable")
      .def("weight", [](const WeightTable& w, const std::string& token) { return w.weight(token); })
      .def_property_readonly("expectation", &WeightTable::expectation)
      .def_property_readonly("delta", &WeightTable::delta)
      .def_property_readonly("min_weight", &WeightTable::min_weight)
      .def_property_readonly("max_weight", &WeightTable::max_weight)
      .def("entries", &WeightTable::entries)
      .def("to_tsv", &WeightTable::to_tsv);

  m.def(
      "build_weights",
      [](const FrequencyTable& table, const std::string& form, double temperature, double amplitude,
         bool normalize_by_median) {
        return build_weight_table(table,
                                  WeightScheme{parse_weight_form(form), amplitude, temperature, normalize_by_median});
      },
      py::arg("table"), py::arg("form"), py::arg("temperature") = 1.0, py::arg("amplitude") = 0.0,
      py::arg("normalize_by_median") = true);
  m.def(
      "validate_criteria",
      [](const WeightTable& weights, double delta_max) {
        const auto r = validate_criteria(weights, delta_max);
        py::dict d;
        d["min_ok"] = r.min_ok;
        d["expectation_ok"] = r.expectation_ok;
        d["min_weight"] = r.min_weight;
        d["expectation"] = r.expectation;
        d["delta"] = r.delta;
        return d;
      },
      py::arg("weights"), py::arg("delta_max") = kDefaultDeltaMax);
  m.def(
      "search_temperature",
      [](const FrequencyTable& table, const std::string& form, const std::vector<double>& grid, double delta_max) {
        py::list out;
        for (const auto& c : search_temperature(table, parse_weight_form(form), grid, delta_max)) {
          py::dict d;
          d["T"] = c.temperature;
          d["A"] = c.amplitude;
          d["delta"] = c.delta;
          d["min_ok"] = c.min_ok;
          d["pass"] = c.pass;
          out.append(d);
        }
        return out;
      },
      py::arg("table"), py::arg("form"), py::arg("grid"), py::arg("delta_max") = kDefaultDeltaMax);

  m.def("softmax", [](const std::vector<double>& logits) {
    std::vector<double> out(logits.size());
    softmax(logits, out);
    return out;
  });
  m.def("focal_weight", &focal_weight, py::arg("p"), py::arg("gamma"), py::arg("plus_one") = false);
  m.def(
      "objective",
      [](const std::vector<std::vector<double>>& logits, const std::vector<TokenId>& targets, const std::string& mode,
         const std::vector<double>& weights, double gamma, bool plus_one, double label_smoothing,
         double entropy_penalty) {
        return objective(steps_of(logits, targets),
                         make_loss(mode, weights, gamma, plus_one, label_smoothing, entropy_penalty));
      },
      py::arg("logits"), py::arg("targets"), py::arg("mode") = "uniform", py::arg("weights") = std::vector<double>{},
      py::arg("gamma") = 1.0, py::arg("plus_one") = false, py::arg("label_smoothing") = 0.0,
      py::arg("entropy_penalty") = 0.0);
  m.def(
      "loss_gradient",
      [](const std::vector<std::vector<double>>& logits, const std::vector<TokenId>& targets, const std::string& mode,
         const std::vector<double>& weights, double gamma, bool plus_one, double label_smoothing,
         double entropy_penalty) {
        return loss_gradient(steps_of(logits, targets),
                             make_loss(mode, weights, gamma, plus_one, label_smoothing, entropy_penalty));
      },
      py::arg("logits"), py::arg("targets"), py::arg("mode") = "uniform", py::arg("weights") = std::vector<double>{},
      py::arg("gamma") = 1.0, py::arg("plus_one") = false, py::arg("label_smoothing") = 0.0,
      py::arg("entropy_penalty") = 0.0);

  m.def(
      "learn_merges",
      [](const std::vector<Sentence>& sentences, std::size_t merges) {
        return bpe::learn_merges(bpe::word_counts(sentences), merges).merges;
      },
      py::arg("sentences"), py::arg("merges"));
  m.def(
      "apply_merges",
      [](const Sentence& sentence, const std::vector<bpe::SymbolPair>& merges) {
        bpe::MergeList list;
        list.merges = merges;
        list.merge_count = merges.size();
        return bpe::apply_merges(sentence, list);
      },
      py::arg("sentence"), py::arg("merges"));
  m.def("detokenize", &bpe::detokenize, py::arg("subwords"));

  m.def(
      "sentence_rarity", [](const Sentence& s, const FrequencyTable& t) { return sentence_rarity(s, t); },
      py::arg("sentence"), py::arg("table"));
  m.def(
      "stratify",
      [](const std::vector<Sentence>& targets, const FrequencyTable& table) {
        auto vocab = std::make_shared<const Vocabulary>(Vocabulary::from_sentences(targets));
        const auto corpus = make_corpus(targets, targets, vocab, vocab);
        const auto s = stratify(corpus, table);
        py::dict d;
        d["high"] = s.high;
        d["middle"] = s.middle;
        d["low"] = s.low;
        return d;
      },
      py::arg("targets"), py::arg("table"));

  m.def(
      "bleu",
      [](const std::vector<Sentence>& hyps, const std::vector<Sentence>& refs) { return bleu_dict(bleu4(hyps, refs)); },
      py::arg("hypotheses"), py::arg("references"));
  m.def("ttr", &ttr, py::arg("text"));
  m.def("hdd", &hdd, py::arg("text"), py::arg("sample_size") = 42);
  m.def("mtld", &mtld, py::arg("text"), py::arg("threshold") = 0.72);

  m.def(
      "generate_zipf",
      [](std::size_t vocab_size, double exponent, std::size_t pairs, std::uint64_t seed) {
        ZipfTaskConfig c;
        c.vocab_size = vocab_size;
        c.exponent = exponent;
        c.pairs = pairs;
        c.seed = seed;
        const auto task = generate_zipf_task(c);
        std::vector<Sentence> src, tgt;
        for (std::size_t i = 0; i < task.train.size(); ++i) {
          src.push_back(task.train.source_tokens(i));
          tgt.push_back(task.train.target_tokens(i));
        }
        return py::make_tuple(src, tgt, task.mapping);
      },
      py::arg("vocab_size") = 200, py::arg("exponent") = 1.0, py::arg("pairs") = 10000, py::arg("seed") = 17);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int status;
        {
          py::gil_scoped_release release;
          status = cli::dispatch(args, out, err);
        }
        return py::make_tuple(status, out.str(), err.str());
      },
      py::arg("args"));
}
