#pragma once

#include <string_view>

// Contents of data/*.json, embedded at build time.
namespace esim::builtin_data {

std::string_view catalog_json();
std::string_view ontology_json();
std::string_view templates_json();
std::string_view tools_json();
std::string_view calibration_json();

}  // namespace esim::builtin_data
