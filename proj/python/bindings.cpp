#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "spatiodec/conv4d.hpp"
#include "spatiodec/data.hpp"
#include "spatiodec/grad_suite.hpp"
#include "spatiodec/model.hpp"
#include "spatiodec/nn.hpp"
#include "spatiodec/training.hpp"

namespace py = pybind11;
using namespace spatiodec;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
Tensor<T> to_tensor(const Array<T>& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<T>(shape, std::vector<T>(a.data(), a.data() + a.size()));
}

template <typename T>
Array<T> to_array(const Tensor<T>& t) {
  Array<T> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

py::dict json_to_dict(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump()).cast<py::dict>();
}

nlohmann::json dict_to_json(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "4D convolutional decoder with residual attention";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  m.def(
      "conv4d",
      [](const Array<double>& x, const Array<double>& w, const Array<double>& b, std::size_t temporal_stride,
         std::size_t spatial_stride) {
        return to_array(conv4d(to_tensor(x), Conv4DKernel<double>{to_tensor(w), to_tensor(b)},
                               {temporal_stride, spatial_stride}));
      },
      py::arg("x"), py::arg("weights"), py::arg("bias"), py::arg("temporal_stride") = 2,
      py::arg("spatial_stride") = 2);
  m.def(
      "conv4d_oracle",
      [](const Array<double>& x, const Array<double>& w, const Array<double>& b, std::size_t temporal_stride,
         std::size_t spatial_stride) {
        return to_array(conv4d_oracle(to_tensor(x), Conv4DKernel<double>{to_tensor(w), to_tensor(b)},
                                      {temporal_stride, spatial_stride}));
      },
      py::arg("x"), py::arg("weights"), py::arg("bias"), py::arg("temporal_stride") = 2,
      py::arg("spatial_stride") = 2);
  m.def(
      "conv3d",
      [](const Array<double>& x, const Array<double>& w, const Array<double>& b, std::size_t stride) {
        return to_array(conv3d(to_tensor(x), Conv3DParams<double>{to_tensor(w), to_tensor(b), stride}));
      },
      py::arg("x"), py::arg("weights"), py::arg("bias"), py::arg("stride") = 1);
  m.def("temporal_flatten", [](const Array<double>& y) { return to_array(temporal_flatten(to_tensor(y))); });

  m.def(
      "spearman",
      [](const std::vector<double>& pred, const std::vector<double>& obs, std::size_t permutations,
         std::uint64_t seed) { return json_to_dict(spearman(pred, obs, permutations, seed)); },
      py::arg("pred"), py::arg("obs"), py::arg("permutations") = 10000, py::arg("seed") = 0);

  m.def(
      "grad_suite",
      [](const std::string& op) {
        py::list out;
        for (const auto& r : run_grad_suite(op)) {
          py::dict d;
          d["op"] = r.op;
          d["shapes"] = r.shapes;
          d["worst"] = r.worst;
          out.append(d);
        }
        return out;
      },
      py::arg("op") = "");

  m.def("read_volume", [](const std::filesystem::path& p) { return to_array(read_volume(p)); });
  m.def("write_volume",
        [](const Array<float>& a, const std::filesystem::path& p) { write_volume(to_tensor(a), p); });
  m.def(
      "phantom_generate",
      [](const py::dict& spec, const std::filesystem::path& out) {
        return json_to_dict(phantom_generate(dict_to_json(spec).get<PhantomSpec>(), out));
      },
      py::arg("spec"), py::arg("out"));
  m.def("read_manifest", [](const std::filesystem::path& root) { return json_to_dict(read_manifest(root)); });

  py::class_<Model<float>>(m, "Model")
      .def_static(
          "build", [](const py::dict& cfg) { return Model<float>::build(dict_to_json(cfg).get<ModelConfig>()); },
          py::arg("config"))
      .def_static("load", [](const std::filesystem::path& p) { return load_checkpoint<float>(p); })
      .def("save", [](Model<float>& self, const std::filesystem::path& p) { save_checkpoint(self, p); })
      .def_property_readonly("config", [](const Model<float>& self) { return json_to_dict(self.config()); })
      .def(
          "forward",
          [](Model<float>& self, const Array<float>& batch) {
            return to_array(self.forward(to_tensor(batch), Mode::infer).output);
          },
          py::arg("batch"))
      .def("masks",
           [](Model<float>& self, const Array<float>& batch) {
             py::list out;
             for (const auto& r : self.forward(to_tensor(batch), Mode::infer, true).records) out.append(to_array(r.A));
             return out;
           })
      .def("tensors", [](Model<float>& self) {
        py::dict out;
        for (auto& [name, t] : self.named_tensors()) out[py::str(name)] = to_array(*t);
        return out;
      });
}
