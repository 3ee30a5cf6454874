#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "unetmer/checkpoint.hpp"
#include "unetmer/pipeline.hpp"
#include "unetmer/training.hpp"

namespace py = pybind11;
using namespace unetmer;

namespace {

template <class T>
Tensor<T> tensor_from_array(const py::array_t<T, py::array::c_style | py::array::forcecast>& a) {
  std::vector<std::size_t> shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[i] = static_cast<std::size_t>(a.shape(i));
  Tensor<T> t(shape);
  std::copy(a.data(), a.data() + a.size(), t.data());
  return t;
}

template <class T>
py::array_t<T> array_from_tensor(const Tensor<T>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<T> a(shape);
  std::copy(t.data(), t.data() + t.numel(), a.mutable_data());
  return a;
}

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using LabelArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

LabelMap label_map(const LabelArray& a) {
  if (a.ndim() != 2) throw ValidationError("label map must be 2-d [H, W]");
  return tensor_from_array<std::uint8_t>(a);
}

std::vector<Sample> samples_from_lists(const std::vector<FloatArray>& images,
                                       const std::vector<LabelArray>& masks,
                                       const std::string& tag) {
  check(images.size() == masks.size(), "images and masks must have equal length");
  check(!images.empty(), "empty sample list");
  std::vector<Sample> samples;
  samples.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    Sample s;
    s.image = tensor_from_array<float>(images[i]);
    if (s.image.ndim() == 2) s.image = s.image.reshaped({1, s.image.dim(0), s.image.dim(1)});
    check(s.image.ndim() == 3, "image must be [C, H, W] or [H, W]");
    s.mask = label_map(masks[i]);
    s.id = tag + "_" + std::to_string(i);
    samples.push_back(std::move(s));
  }
  return samples;
}

class PyModel {
 public:
  PyModel(const std::string& backbone, std::vector<int> scales,
          std::pair<std::size_t, std::size_t> input_size, int base_channels, int n_pool,
          int num_classes, int in_channels, bool use_transformer, int layers, int heads,
          double mlp_ratio, std::uint64_t seed) {
    UNetmerConfig cfg;
    cfg.backbone.variant = variant_from_string(backbone);
    cfg.backbone.in_channels = in_channels;
    cfg.backbone.base_channels = base_channels;
    cfg.backbone.n_pool = n_pool;
    cfg.backbone.num_classes = num_classes;
    cfg.transformer.num_layers = layers;
    cfg.transformer.num_heads = heads;
    cfg.transformer.mlp_ratio = mlp_ratio;
    cfg.scales = std::move(scales);
    cfg.input_h = input_size.first;
    cfg.input_w = input_size.second;
    cfg.use_transformer = use_transformer;
    model_ = std::make_unique<UNetmer<float>>(cfg, seed);
  }

  explicit PyModel(std::unique_ptr<UNetmer<float>> model) : model_(std::move(model)) {}

  py::array_t<float> forward(const FloatArray& image, int s) {
    Tensor<float> img = tensor_from_array<float>(image);
    check(img.ndim() == 3, "image must be [C, H, W]");
    Tensor<float> logits = squeeze0(model_->forward_at_scale(unsqueeze0(img), s, false));
    return array_from_tensor(logits);
  }

  py::array_t<std::uint8_t> predict(const FloatArray& image, int s) {
    Tensor<float> img = tensor_from_array<float>(image);
    check(img.ndim() == 3, "image must be [C, H, W]");
    return array_from_tensor(model_->predict(img, s));
  }

  py::dict predict_multiscale(const FloatArray& image) {
    Tensor<float> img = tensor_from_array<float>(image);
    auto out = model_->forward_multiscale(img);
    py::dict d;
    for (const auto& [s, labels] : out.labels) d[py::int_(s)] = array_from_tensor(labels);
    return d;
  }

  std::vector<std::pair<std::string, py::array_t<float>>> features(const FloatArray& image,
                                                                   int s) {
    Tensor<float> img = tensor_from_array<float>(image);
    std::vector<std::pair<std::string, py::array_t<float>>> out;
    for (auto& [name, f] : model_->forward_features(img, s))
      out.emplace_back(name, array_from_tensor(f));
    return out;
  }

  std::vector<py::dict> fit(const std::vector<FloatArray>& images,
                            const std::vector<LabelArray>& masks,
                            const std::vector<FloatArray>& val_images,
                            const std::vector<LabelArray>& val_masks, int epochs, int batch_size,
                            double lr0, int lr_halving_period, std::uint64_t seed,
                            const std::string& mixing) {
    auto train_samples = samples_from_lists(images, masks, "train");
    std::vector<Sample> val_samples;
    if (!val_images.empty()) val_samples = samples_from_lists(val_images, val_masks, "val");

    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = batch_size;
    cfg.lr0 = lr0;
    cfg.lr_halving_period = lr_halving_period;
    cfg.scales = model_->config().scales;
    cfg.seed = seed;
    if (mixing == "roundrobin")
      cfg.mixing = ScaleMixing::RoundRobin;
    else if (mixing == "random")
      cfg.mixing = ScaleMixing::UniformRandom;
    else
      throw ValidationError("mixing must be roundrobin or random");

    TrainHistory history;
    {
      py::gil_scoped_release release;
      history = train(*model_, train_samples, val_samples, cfg);
    }
    std::vector<py::dict> out;
    for (const auto& r : history.epochs) {
      py::dict d;
      d["epoch"] = r.epoch;
      d["lr"] = r.lr;
      d["train_loss"] = r.train_loss;
      d["val_dice_s1"] = r.val_dice_s1;
      out.push_back(std::move(d));
    }
    return out;
  }

  std::size_t parameter_count() { return model_->parameter_count(); }
  std::vector<int> scales() const { return model_->config().scales; }
  void save(const std::string& path) { save_checkpoint(*model_, path); }

  UNetmer<float>& model() { return *model_; }

 private:
  std::unique_ptr<UNetmer<float>> model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "U-Netmer: multi-scale patch segmentation with a transformer bottleneck";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_IOError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);

  m.def(
      "make_synthetic_dataset",
      [](std::uint64_t seed, int count, std::pair<std::size_t, std::size_t> size,
         std::pair<double, double> contrast_range, double noise_std) {
        auto samples = make_synthetic_dataset(seed, count, size, contrast_range, noise_std);
        std::vector<py::tuple> out;
        out.reserve(samples.size());
        for (const auto& s : samples)
          out.push_back(
              py::make_tuple(array_from_tensor(s.image), array_from_tensor(s.mask), s.id));
        return out;
      },
      py::arg("seed"), py::arg("count"), py::arg("size") = std::pair<std::size_t, std::size_t>{64, 64},
      py::arg("contrast_range") = std::pair<double, double>{0.15, 0.6},
      py::arg("noise_std") = 0.1,
      "Deterministic elliptical-phantom corpus; returns (image, mask, id) tuples.");

  m.def(
      "split",
      [](const FloatArray& image, int s) {
        auto grid = split(tensor_from_array<float>(image), s);
        const auto& p0 = grid.patches.front();
        Tensor<float> packed({grid.patches.size(), p0.dim(0), p0.dim(1), p0.dim(2)});
        for (std::size_t p = 0; p < grid.patches.size(); ++p)
          std::copy(grid.patches[p].data(), grid.patches[p].data() + p0.numel(),
                    packed.data() + p * p0.numel());
        return array_from_tensor(packed);
      },
      py::arg("image"), py::arg("s"),
      "Cut [C, H, W] into s*s patches, row-major, returned as [s*s, C, H/s, W/s].");

  m.def(
      "stitch",
      [](const FloatArray& patches, int s) {
        Tensor<float> packed = tensor_from_array<float>(patches);
        check(packed.ndim() == 4, "patches must be [s*s, K, H/s, W/s]");
        PatchGrid<float> grid;
        grid.s = s;
        for (std::size_t p = 0; p < packed.dim(0); ++p) {
          Tensor<float> patch({packed.dim(1), packed.dim(2), packed.dim(3)});
          std::copy(&packed(p, 0, 0, 0), &packed(p, 0, 0, 0) + patch.numel(), patch.data());
          grid.patches.push_back(std::move(patch));
        }
        return array_from_tensor(stitch(grid));
      },
      py::arg("patches"), py::arg("s"), "Exact inverse of split().");

  m.def(
      "preprocess",
      [](const FloatArray& image, const LabelArray& mask,
         std::optional<std::pair<double, double>> truncate_percentiles, bool normalize,
         std::optional<std::pair<std::size_t, std::size_t>> target_size) {
        Sample s;
        s.image = tensor_from_array<float>(image);
        s.mask = label_map(mask);
        s.id = "py";
        PreprocessSpec spec;
        spec.truncate_percentiles = truncate_percentiles;
        spec.normalize = normalize;
        spec.target_size = target_size;
        auto out = preprocess(s, spec);
        return py::make_tuple(array_from_tensor(out.image), array_from_tensor(out.mask));
      },
      py::arg("image"), py::arg("mask"), py::arg("truncate_percentiles") = std::nullopt,
      py::arg("normalize") = true, py::arg("target_size") = std::nullopt);

  m.def("dice", [](const LabelArray& p, const LabelArray& g, int k) {
    return dice(label_map(p), label_map(g), k);
  }, py::arg("pred"), py::arg("gt"), py::arg("num_classes") = 2);
  m.def("jaccard", [](const LabelArray& p, const LabelArray& g, int k) {
    return jaccard(label_map(p), label_map(g), k);
  }, py::arg("pred"), py::arg("gt"), py::arg("num_classes") = 2);
  m.def("pixel_accuracy", [](const LabelArray& p, const LabelArray& g, int k) {
    return pixel_accuracy(label_map(p), label_map(g), k);
  }, py::arg("pred"), py::arg("gt"), py::arg("num_classes") = 2);
  m.def("sensitivity", [](const LabelArray& p, const LabelArray& g, int k) {
    return sensitivity(label_map(p), label_map(g), k);
  }, py::arg("pred"), py::arg("gt"), py::arg("num_classes") = 2);
  m.def("specificity", [](const LabelArray& p, const LabelArray& g, int k) {
    return specificity(label_map(p), label_map(g), k);
  }, py::arg("pred"), py::arg("gt"), py::arg("num_classes") = 2);
  m.def("confidence_score", [](const LabelArray& a, const LabelArray& b, int k) {
    return confidence_score(label_map(a), label_map(b), k);
  }, py::arg("b_i"), py::arg("b_j"), py::arg("num_classes") = 2,
        "Dice agreement between two segmentation maps of the same image.");

  m.def("pearson", &pearson, py::arg("x"), py::arg("y"));
  m.def("coverage_curve", &coverage_curve, py::arg("scores"), py::arg("dices"),
        py::arg("deciles"));
  m.def(
      "protoseg_sa",
      [](const FloatArray& fmap, const LabelArray& mask) {
        return protoseg_sa(tensor_from_array<float>(fmap), label_map(mask));
      },
      py::arg("feature_map"), py::arg("reference_mask"),
      "Prototype segmentation-ability score; None when undefined.");

  m.def(
      "lr_at_epoch",
      [](double lr0, int period, int epoch, int epochs) {
        TrainConfig cfg;
        cfg.lr0 = lr0;
        cfg.lr_halving_period = period;
        cfg.epochs = epochs;
        return lr_at_epoch(cfg, epoch);
      },
      py::arg("lr0"), py::arg("period"), py::arg("epoch"), py::arg("epochs") = 100);

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&, std::vector<int>, std::pair<std::size_t, std::size_t>,
                    int, int, int, int, bool, int, int, double, std::uint64_t>(),
           py::arg("backbone") = "unet", py::arg("scales") = std::vector<int>{1, 2},
           py::arg("input_size") = std::pair<std::size_t, std::size_t>{64, 64},
           py::arg("base_channels") = 16, py::arg("n_pool") = 4, py::arg("num_classes") = 2,
           py::arg("in_channels") = 1, py::arg("use_transformer") = true, py::arg("layers") = 4,
           py::arg("heads") = 8, py::arg("mlp_ratio") = 4.0, py::arg("seed") = 0)
      .def("forward", &PyModel::forward, py::arg("image"), py::arg("s"),
           "Logits [num_classes, H, W] at scale s.")
      .def("predict", &PyModel::predict, py::arg("image"), py::arg("s") = 1,
           "Per-pixel argmax labels B_{s}.")
      .def("predict_multiscale", &PyModel::predict_multiscale, py::arg("image"),
           "Dict scale -> label map, one forward per configured scale.")
      .def("features", &PyModel::features, py::arg("image"), py::arg("s") = 1)
      .def("fit", &PyModel::fit, py::arg("images"), py::arg("masks"),
           py::arg("val_images") = std::vector<FloatArray>{},
           py::arg("val_masks") = std::vector<LabelArray>{}, py::arg("epochs") = 10,
           py::arg("batch_size") = 16, py::arg("lr0") = 1e-4,
           py::arg("lr_halving_period") = 20, py::arg("seed") = 0,
           py::arg("mixing") = "roundrobin")
      .def("parameter_count", &PyModel::parameter_count)
      .def_property_readonly("scales", &PyModel::scales)
      .def("save", &PyModel::save, py::arg("path"))
      .def_static("load", [](const std::string& path) {
        return PyModel(std::make_unique<UNetmer<float>>(load_checkpoint<float>(path)));
      }, py::arg("path"));
}
