#pragma once

// INI section readers and writers shared by config, dataset and checkpoint files.

#include "dpc/data.hpp"
#include "ini.hpp"

namespace dpc {

DatasetConfig read_dataset_section(const ini::Tree& section);

}  // namespace dpc
