#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>
#include <optional>

#include "geoshield/encoder.hpp"
#include "geoshield/errors.hpp"
#include "geoshield/geo_ee.hpp"
#include "geoshield/geo_metrics.hpp"
#include "geoshield/geolocation.hpp"
#include "geoshield/gnfd.hpp"
#include "geoshield/image.hpp"
#include "geoshield/pipeline.hpp"
#include "geoshield/psae.hpp"
#include "geoshield/semantic.hpp"
#include "geoshield/synthetic.hpp"

namespace py = pybind11;
namespace gs = geoshield;

namespace {

using ImageArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

gs::Image to_image(const ImageArray& a) {
  if (a.ndim() != 3 || a.shape(2) != 3)
    throw gs::DomainError("expected an image array of shape (height, width, 3)");
  const auto n = static_cast<std::size_t>(a.size());
  std::vector<double> v(a.data(), a.data() + n);
  return gs::Image(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), std::move(v));
}

py::array_t<double> to_array(const gs::Image& img) {
  py::array_t<double> out({img.height(), img.width(), 3});
  std::copy(img.values().begin(), img.values().end(), out.mutable_data());
  return out;
}

gs::FeatureVector to_feature(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 1) throw gs::DomainError("expected a 1-D feature array");
  return gs::FeatureVector(std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> to_array(const gs::FeatureVector& f) {
  py::array_t<double> out(static_cast<py::ssize_t>(f.dim()));
  std::copy(f.values().begin(), f.values().end(), out.mutable_data());
  return out;
}

py::object to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

gs::CropRegion to_region(const std::tuple<int, int, int, int>& t) {
  return {std::get<0>(t), std::get<1>(t), std::get<2>(t), std::get<3>(t)};
}

class PyEncoderPair : public gs::EncoderPair, public py::trampoline_self_life_support {
 public:
  std::string id() const override { PYBIND11_OVERRIDE_PURE(std::string, gs::EncoderPair, id, ); }
  int image_input_size() const override {
    PYBIND11_OVERRIDE_PURE(int, gs::EncoderPair, image_input_size, );
  }
  int feature_dim() const override { PYBIND11_OVERRIDE_PURE(int, gs::EncoderPair, feature_dim, ); }

  gs::EncoderCapabilities capabilities() const override {
    py::gil_scoped_acquire gil;
    gs::EncoderCapabilities caps;
    caps.input_gradient = static_cast<bool>(py::get_override(this, "embed_image_vjp"));
    return caps;
  }

  gs::FeatureVector embed_image(const gs::Image& prepared) const override {
    py::gil_scoped_acquire gil;
    py::function f = py::get_override(this, "embed_image");
    if (!f) throw gs::ContractError("EncoderPair subclass must define embed_image");
    return to_feature(f(to_array(prepared)).cast<ImageArray>());
  }

  gs::Image embed_image_vjp(const gs::Image& prepared,
                            const gs::FeatureVector& upstream) const override {
    py::gil_scoped_acquire gil;
    py::function f = py::get_override(this, "embed_image_vjp");
    if (!f) return gs::EncoderPair::embed_image_vjp(prepared, upstream);
    gs::Image g = to_image(f(to_array(prepared), to_array(upstream)).cast<ImageArray>());
    if (g.height() != prepared.height() || g.width() != prepared.width())
      throw gs::ContractError("embed_image_vjp returned an array of the wrong shape");
    return g;
  }

  gs::FeatureVector embed_text(const std::string& text) const override {
    py::gil_scoped_acquire gil;
    py::function f = py::get_override(this, "embed_text");
    if (!f) throw gs::ContractError("EncoderPair subclass must define embed_text");
    return to_feature(f(text).cast<ImageArray>());
  }
};

std::vector<gs::EncoderPtr> as_pairs(const std::vector<std::shared_ptr<gs::EncoderPair>>& v) {
  return {v.begin(), v.end()};
}

py::tuple attack_result(const gs::AttackResult& r) {
  py::list trace;
  for (const auto& rec : r.trace.iterations) {
    py::dict d;
    d["iteration"] = rec.iteration;
    d["loss"] = rec.loss;
    d["terms"] = rec.terms;
    d["linf"] = rec.linf;
    trace.append(d);
  }
  return py::make_tuple(to_array(r.protected_image), trace);
}

gs::IterationObserver wrap_observer(const std::optional<py::function>& cb) {
  if (!cb) return {};
  py::function f = *cb;
  return [f](const gs::IterationRecord& rec, const gs::Image&) {
    py::gil_scoped_acquire gil;
    f(rec.iteration, rec.loss, rec.linf);
  };
}

gs::GeoFeatureBundle make_bundle(const gs::EncoderEnsemble& ens, const ImageArray& clean,
                                 const std::string& description,
                                 const std::vector<std::tuple<int, int, int, int>>& boxes,
                                 bool raw_features, int min_box_side) {
  const gs::Image img = to_image(clean);
  const gs::FeatureMode mode = raw_features ? gs::FeatureMode::kRaw : gs::FeatureMode::kNormalized;
  gs::GeoFeatureBundle bundle =
      gs::build_geo_bundle(ens, img, {description, gs::ResponseSource::kFixture, "python"}, mode);
  if (!boxes.empty()) {
    std::vector<gs::BoundingBox> bb;
    for (const auto& b : boxes) bb.push_back({to_region(b), {"box", std::nullopt}, 1.0});
    gs::DetectionConfig dc;
    dc.min_side = min_box_side;
    gs::attach_box_features(bundle, ens, gs::box_features(ens, img, bb, dc));
  }
  return bundle;
}

}  // namespace

PYBIND11_MODULE(_geoshield, m) {
  m.doc() = "Geolocation privacy protection by disentangled adversarial perturbation";

  auto base = py::register_exception<std::runtime_error>(m, "GeoShieldError", PyExc_RuntimeError);
  py::register_exception<gs::DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<gs::ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<gs::IoError>(m, "IoError", base.ptr());
  py::register_exception<gs::TransformError>(m, "TransformError", base.ptr());
  py::register_exception<gs::CapabilityError>(m, "CapabilityError", base.ptr());
  py::register_exception<gs::DegenerateDecompositionError>(m, "DegenerateDecompositionError",
                                                           base.ptr());
  py::register_exception<gs::TransportError>(m, "TransportError", base.ptr());
  py::register_exception<gs::ProtocolError>(m, "ProtocolError", base.ptr());
  py::register_exception<gs::SolverError>(m, "SolverError", base.ptr());
  py::register_exception<gs::ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<gs::EmptyReportError>(m, "EmptyReportError", base.ptr());

  // ---- geo metrics

  m.def(
      "haversine_km",
      [](double lat1, double lon1, double lat2, double lon2) {
        return gs::haversine_distance(gs::GeoCoordinate::make(lat1, lon1),
                                      gs::GeoCoordinate::make(lat2, lon2));
      },
      py::arg("lat1"), py::arg("lon1"), py::arg("lat2"), py::arg("lon2"));
  m.def(
      "bucket_accuracy",
      [](const std::vector<double>& d, const std::vector<double>& t) {
        return gs::bucket_accuracy(d, t);
      },
      py::arg("distances_km"),
      py::arg("thresholds_km") =
          std::vector<double>(gs::kDefaultThresholdsKm.begin(), gs::kDefaultThresholdsKm.end()));
  m.def(
      "distance_report",
      [](const std::vector<std::pair<std::string, std::optional<double>>>& entries,
         const std::vector<double>& thresholds) {
        std::vector<gs::DistanceEntry> e;
        for (const auto& [id, d] : entries) e.push_back({id, d});
        return to_py(gs::to_json(gs::make_distance_report(std::move(e), thresholds)));
      },
      py::arg("entries"),
      py::arg("thresholds_km") =
          std::vector<double>(gs::kDefaultThresholdsKm.begin(), gs::kDefaultThresholdsKm.end()),
      "entries: (image_id, distance_km or None for a refusal) pairs. Returns the report dict.");
  m.def(
      "parse_coordinates",
      [](const std::string& text) -> std::optional<std::pair<double, double>> {
        const auto c = gs::parse_coordinates(text);
        if (!c) return std::nullopt;
        return std::make_pair(c->lat(), c->lon());
      },
      py::arg("text"));
  m.def(
      "format_coordinates",
      [](double lat, double lon) { return gs::format_coordinates(gs::GeoCoordinate::make(lat, lon)); },
      py::arg("lat"), py::arg("lon"));

  // ---- semantic metrics

  m.def("sentence_bleu", [](const std::string& r, const std::string& c) { return gs::sentence_bleu(r, c); },
        py::arg("reference"), py::arg("candidate"));
  m.def("rouge_l_f1", [](const std::string& r, const std::string& c) { return gs::rouge_l_f1(r, c); },
        py::arg("reference"), py::arg("candidate"));

  // ---- imaging

  m.def("load_image", [](const std::filesystem::path& p) { return to_array(gs::load_image(p)); },
        py::arg("path"), "RGB float64 array in [0, 1], shape (height, width, 3).");
  m.def("save_png", [](const ImageArray& a, const std::filesystem::path& p) {
    gs::save_protected(to_image(a), p);
  }, py::arg("image"), py::arg("path"));
  m.def("resize", [](const ImageArray& a, int h, int w) { return to_array(gs::resize(to_image(a), h, w)); },
        py::arg("image"), py::arg("height"), py::arg("width"));
  m.def("jpeg_roundtrip", [](const ImageArray& a, int q) { return to_array(gs::jpeg_roundtrip(to_image(a), q)); },
        py::arg("image"), py::arg("quality"));
  m.def("gaussian_blur", [](const ImageArray& a, double s) { return to_array(gs::gaussian_blur(to_image(a), s)); },
        py::arg("image"), py::arg("sigma"));
  m.def(
      "synthetic_scene",
      [](std::uint64_t seed, int h, int w) {
        const auto s = gs::synthetic_scene(seed, h, w);
        std::vector<std::tuple<int, int, int, int>> boxes;
        for (const auto& r : s.landmarks) boxes.emplace_back(r.top, r.left, r.height, r.width);
        return py::make_tuple(to_array(s.image), boxes);
      },
      py::arg("seed"), py::arg("height"), py::arg("width"),
      "Returns (image, landmark boxes as (top, left, height, width)).");

  // ---- encoders

  py::class_<gs::EncoderPair, PyEncoderPair, py::smart_holder>(m, "EncoderPair", R"doc(
Image/text encoder pair. Subclass and define id, image_input_size,
feature_dim, embed_image(image) and embed_text(text). Define
embed_image_vjp(image, upstream) to make the pair usable for attacks; it
returns d<upstream, embed_image(image)>/d image with the image's shape.
embed_image receives images already resized to image_input_size.)doc")
      .def(py::init<>())
      .def("id", &gs::EncoderPair::id)
      .def("image_input_size", &gs::EncoderPair::image_input_size)
      .def("feature_dim", &gs::EncoderPair::feature_dim)
      .def("embed_image", [](const gs::EncoderPair& p, const ImageArray& a) {
        return to_array(p.embed_image(to_image(a)));
      })
      .def("embed_text", [](const gs::EncoderPair& p, const std::string& t) {
        return to_array(p.embed_text(t));
      })
      .def("encode_image", [](const gs::EncoderPair& p, const ImageArray& a) {
        return to_array(gs::encode_image(p, to_image(a)));
      }, "Feature of a full image of any size.");

  m.def(
      "toy_encoder",
      [](std::uint64_t seed, int input_size, int feature_dim) {
        return std::const_pointer_cast<gs::EncoderPair>(gs::make_toy_encoder(seed, input_size, feature_dim));
      },
      py::arg("seed"), py::arg("input_size") = 224, py::arg("feature_dim") = 64);

  m.def("cosine_similarity", [](const py::array_t<double>& a, const py::array_t<double>& b) {
    return gs::cosine_similarity(to_feature(a), to_feature(b));
  }, py::arg("a"), py::arg("b"));

  // ---- attacks

  py::class_<gs::AttackConfig>(m, "AttackConfig")
      .def(py::init<>())
      .def_readwrite("epsilon", &gs::AttackConfig::epsilon)
      .def_readwrite("step_size", &gs::AttackConfig::step_size)
      .def_readwrite("iterations", &gs::AttackConfig::iterations)
      .def_readwrite("alpha", &gs::AttackConfig::alpha)
      .def_readwrite("beta", &gs::AttackConfig::beta)
      .def_readwrite("n_patch", &gs::AttackConfig::n_patch)
      .def_readwrite("patch_size", &gs::AttackConfig::patch_size)
      .def_readwrite("seed", &gs::AttackConfig::seed)
      .def_readwrite("disentangle", &gs::AttackConfig::disentangle)
      .def("validate", &gs::AttackConfig::validate)
      .def("to_text", [](const gs::AttackConfig& c) { return gs::to_config_text(c); })
      .def("__repr__", [](const gs::AttackConfig& c) { return "<AttackConfig\n" + gs::to_config_text(c) + ">"; });

  m.def(
      "protect",
      [](const ImageArray& image, const std::vector<std::shared_ptr<gs::EncoderPair>>& encoders,
         const std::string& description, const std::vector<std::tuple<int, int, int, int>>& boxes,
         const gs::AttackConfig& cfg, bool raw_features, int min_box_side,
         const std::optional<py::function>& callback) {
        const gs::EncoderEnsemble ens(as_pairs(encoders));
        const gs::Image img = to_image(image);
        gs::GeoFeatureBundle bundle = make_bundle(ens, image, description, boxes, raw_features, min_box_side);
        const auto observer = wrap_observer(callback);
        gs::AttackResult r;
        double geo_clean, geo_prot, ng_clean, ng_prot;
        {
          py::gil_scoped_release nogil;
          r = gs::ifgsm_protect(img, ens, bundle, cfg, observer);
          geo_clean = gs::mean_geo_similarity(ens, img, bundle);
          geo_prot = gs::mean_geo_similarity(ens, r.protected_image, bundle);
          ng_clean = gs::mean_nongeo_similarity(ens, img, bundle);
          ng_prot = gs::mean_nongeo_similarity(ens, r.protected_image, bundle);
        }
        py::tuple t = attack_result(r);
        py::dict sims;
        sims["geo_clean"] = geo_clean;
        sims["geo_protected"] = geo_prot;
        sims["nongeo_clean"] = ng_clean;
        sims["nongeo_protected"] = ng_prot;
        return py::make_tuple(t[0], t[1], sims);
      },
      py::arg("image"), py::arg("encoders"), py::arg("description"),
      py::arg("boxes") = std::vector<std::tuple<int, int, int, int>>{},
      py::arg("config") = gs::AttackConfig{}, py::arg("raw_features") = false,
      py::arg("min_box_side") = 16, py::arg("callback") = std::nullopt,
      R"doc(Protects one image. description is the geo-free caption; boxes are
(top, left, height, width) geo-exposure regions. callback(iteration, loss,
linf) runs after every step. Returns (protected, trace, similarities).)doc");

  m.def(
      "targeted_baseline",
      [](const ImageArray& image, const ImageArray& target,
         const std::vector<std::shared_ptr<gs::EncoderPair>>& encoders, const gs::AttackConfig& cfg) {
        const gs::EncoderEnsemble ens(as_pairs(encoders));
        const gs::Image a = to_image(image), b = to_image(target);
        gs::AttackResult r;
        {
          py::gil_scoped_release nogil;
          r = gs::targeted_baseline(a, b, ens, cfg);
        }
        return attack_result(r);
      },
      py::arg("image"), py::arg("target"), py::arg("encoders"), py::arg("config") = gs::AttackConfig{});
  m.def(
      "untargeted_baseline",
      [](const ImageArray& image, const std::vector<std::shared_ptr<gs::EncoderPair>>& encoders,
         const gs::AttackConfig& cfg) {
        const gs::EncoderEnsemble ens(as_pairs(encoders));
        const gs::Image a = to_image(image);
        gs::AttackResult r;
        {
          py::gil_scoped_release nogil;
          r = gs::untargeted_baseline(a, ens, cfg);
        }
        return attack_result(r);
      },
      py::arg("image"), py::arg("encoders"), py::arg("config") = gs::AttackConfig{});

  // ---- offline pipeline

  m.def(
      "write_synthetic_dataset",
      [](const std::filesystem::path& dir, int count, int size, std::uint64_t seed) {
        return gs::write_synthetic_dataset(dir, count, size, seed);
      },
      py::arg("dir"), py::arg("count") = 4, py::arg("size") = 256, py::arg("seed") = 0,
      "Writes scenes, manifest.jsonl and offline client fixtures; returns the manifest path.");

  m.def(
      "protect_dataset",
      [](const std::filesystem::path& manifest_path, const std::filesystem::path& out_dir,
         const std::filesystem::path& fixtures, const gs::AttackConfig& cfg, int working_size,
         const std::vector<std::shared_ptr<gs::EncoderPair>>& encoders) {
        const auto manifest = gs::DatasetManifest::load(manifest_path);
        const gs::EncoderEnsemble ens = encoders.empty()
                                            ? gs::build_ensemble(gs::default_encoder_specs())
                                            : gs::EncoderEnsemble(as_pairs(encoders));
        gs::FixtureVlmClient vlm(fixtures / "vlm");
        std::unique_ptr<gs::MockDetector> det;
        if (std::filesystem::exists(fixtures / "detector.json"))
          det = std::make_unique<gs::MockDetector>(fixtures / "detector.json");
        gs::ProtectOptions opts;
        opts.attack = cfg;
        opts.working_size = working_size;
        gs::RunManifest rm;
        {
          py::gil_scoped_release nogil;
          rm = gs::cli_protect(manifest, ens, opts, {&vlm, det.get(), nullptr}, out_dir);
        }
        return to_py(rm.to_json());
      },
      py::arg("manifest"), py::arg("out_dir"), py::arg("fixtures"),
      py::arg("config") = gs::AttackConfig{}, py::arg("working_size") = 0,
      py::arg("encoders") = std::vector<std::shared_ptr<gs::EncoderPair>>{},
      R"doc(Batch protection with offline fixture clients (a synthetic dataset
directory). Writes PNGs, traces and run_manifest.json into out_dir and
returns the manifest dict. Without encoders the two default toy pairs run.)doc");

  m.def(
      "evaluate_dataset",
      [](const std::filesystem::path& manifest_path, const std::filesystem::path& target_fixtures,
         const std::optional<std::filesystem::path>& image_dir) {
        const auto manifest = gs::DatasetManifest::load(manifest_path);
        gs::FixtureTargetVlmClient client(target_fixtures);
        const auto preds = gs::predict_geolocations(client, manifest, image_dir);
        return to_py(gs::to_json(gs::evaluate_predictions(manifest, preds)));
      },
      py::arg("manifest"), py::arg("target_fixtures"), py::arg("image_dir") = std::nullopt);

  m.def(
      "evaluate_predictions",
      [](const std::filesystem::path& manifest_path, const std::filesystem::path& predictions) {
        const auto manifest = gs::DatasetManifest::load(manifest_path);
        return to_py(gs::to_json(gs::evaluate_predictions(manifest, gs::read_predictions_jsonl(predictions))));
      },
      py::arg("manifest"), py::arg("predictions"));
}
