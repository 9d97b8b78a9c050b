#pragma once

// JSON wiring for hierarchy specifications. Kept out of dgp.hpp so the core
// headers do not depend on the vendored nlohmann/json single header; callers
// must have json.hpp on their include path.

#include <ssdgp/dgp.hpp>

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace ssdgp {

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj, const std::set<std::string>& allowed,
                                const std::string& where) {
  for (const auto& item : obj.items())
    if (!allowed.count(item.key()))
      throw std::invalid_argument("dgp graph: unknown key '" + item.key() + "' in " + where);
}

}  // namespace detail

// Document shape:
//   {"elements": [
//     {"index": 1, "nu": 0.5,
//      "parents": {"length_scale": 2, "magnitude": 3}, "transform": "exp"},
//     {"index": 2, "parent_of": 1, "nu": 0.5, "fixed": {"ell": 2.0, "sigma": 2.0}},
//     ...]}
// Roles are declared by the consuming element's "parents" block; a
// "parent_of" back-reference is optional redundancy and must agree with it.
// Unknown keys are rejected. Parameters not driven by a parent default to the
// "fixed" entries (1.0 when absent); "transform" defaults to exp.
inline SsdgpModel ssdgp_from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || !doc.contains("elements") || !doc["elements"].is_array())
    throw std::invalid_argument("dgp graph: document must be an object with an elements array");
  detail::reject_unknown_keys(doc, {"elements"}, "the document root");

  struct Raw {
    int index = 0;
    int parent_of = -1;  // -1 = not declared
    double nu = 0.0;
    double fixed_ell = 1.0;
    double fixed_sigma = 1.0;
    bool ell_fixed_explicit = false;
    bool sigma_fixed_explicit = false;
    int ell_parent = 0;
    int sigma_parent = 0;
    std::string transform = "exp";
  };
  std::vector<Raw> raws;
  for (const auto& e : doc["elements"]) {
    if (!e.is_object()) throw std::invalid_argument("dgp graph: elements must be objects");
    detail::reject_unknown_keys(e, {"index", "parent_of", "nu", "fixed", "parents", "transform"},
                                "an element");
    Raw r;
    if (!e.contains("index") || !e["index"].is_number_integer())
      throw std::invalid_argument("dgp graph: every element needs an integer index");
    r.index = e["index"].get<int>();
    const std::string where = "element " + std::to_string(r.index);
    if (!e.contains("nu") || !e["nu"].is_number())
      throw std::invalid_argument("dgp graph: " + where + " is missing nu");
    r.nu = e["nu"].get<double>();
    if (e.contains("parent_of")) r.parent_of = e["parent_of"].get<int>();
    if (e.contains("transform")) r.transform = e["transform"].get<std::string>();
    if (e.contains("fixed")) {
      detail::reject_unknown_keys(e["fixed"], {"ell", "sigma"}, where + " fixed block");
      if (e["fixed"].contains("ell")) {
        r.fixed_ell = e["fixed"]["ell"].get<double>();
        r.ell_fixed_explicit = true;
      }
      if (e["fixed"].contains("sigma")) {
        r.fixed_sigma = e["fixed"]["sigma"].get<double>();
        r.sigma_fixed_explicit = true;
      }
    }
    if (e.contains("parents")) {
      detail::reject_unknown_keys(e["parents"], {"length_scale", "magnitude"},
                                  where + " parents block");
      if (e["parents"].contains("length_scale"))
        r.ell_parent = e["parents"]["length_scale"].get<int>();
      if (e["parents"].contains("magnitude"))
        r.sigma_parent = e["parents"]["magnitude"].get<int>();
    }
    if (r.ell_parent > 0 && r.ell_fixed_explicit)
      throw std::invalid_argument("dgp graph: " + where +
                                  " declares ell both fixed and parent-driven");
    if (r.sigma_parent > 0 && r.sigma_fixed_explicit)
      throw std::invalid_argument("dgp graph: " + where +
                                  " declares sigma both fixed and parent-driven");
    raws.push_back(r);
  }

  // Resolve each element's target and role from the consumers' parents
  // blocks, then check the optional parent_of back-references.
  std::map<int, std::pair<int, ParentRole>> target_of;  // parent index -> (consumer, role)
  for (const Raw& r : raws) {
    const auto claim = [&](int parent, ParentRole role) {
      if (parent <= 0) return;
      if (target_of.count(parent))
        throw std::invalid_argument("dgp graph: element " + std::to_string(parent) +
                                    " is listed as a parent more than once");
      target_of[parent] = {r.index, role};
    };
    claim(r.ell_parent, ParentRole::length_scale);
    claim(r.sigma_parent, ParentRole::magnitude);
  }
  std::set<int> present;
  for (const Raw& r : raws) present.insert(r.index);
  for (const auto& [parent, consumer] : target_of)
    if (!present.count(parent))
      throw std::invalid_argument("dgp graph: element " + std::to_string(consumer.first) +
                                  " lists parent " + std::to_string(parent) +
                                  " which does not exist");
  std::vector<DgpElementSpec> spec;
  std::vector<MaternParams> params;
  std::map<int, Transform> transforms;
  for (const Raw& r : raws) {
    DgpElementSpec e;
    e.index = r.index;
    const auto it = target_of.find(r.index);
    if (it != target_of.end()) {
      e.parent_of = it->second.first;
      e.role = it->second.second;
      if (r.parent_of >= 0 && r.parent_of != e.parent_of)
        throw std::invalid_argument("dgp graph: element " + std::to_string(r.index) +
                                    " declares parent_of=" + std::to_string(r.parent_of) +
                                    " but element " + std::to_string(e.parent_of) +
                                    " lists it as a parent");
    } else {
      if (r.parent_of > 0)
        throw std::invalid_argument(
            "dgp graph: element " + std::to_string(r.index) + " declares parent_of=" +
            std::to_string(r.parent_of) + " but element " + std::to_string(r.parent_of) +
            " does not list it as a parent, so its role is unknown");
      e.parent_of = 0;
    }
    e.dim = static_cast<int>(std::lround(r.nu + 0.5));
    spec.push_back(e);
  }
  std::sort(spec.begin(), spec.end(),
            [](const DgpElementSpec& a, const DgpElementSpec& b) { return a.index < b.index; });
  std::sort(raws.begin(), raws.end(), [](const Raw& a, const Raw& b) { return a.index < b.index; });
  for (const Raw& r : raws) {
    params.push_back(MaternParams{r.nu, r.fixed_ell, r.fixed_sigma});
    if (r.ell_parent > 0 || r.sigma_parent > 0)
      transforms.emplace(r.index, make_transform(r.transform));
  }
  return assemble(build_graph(std::move(spec)), params, transforms);
}

inline SsdgpModel load_ssdgp_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open graph file '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("cannot parse graph file '" + path + "': " + e.what());
  }
  return ssdgp_from_json(doc);
}

}  // namespace ssdgp
