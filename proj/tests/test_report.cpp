// SPDX-License-Identifier: Apache-2.0

#include <sstream>

#include <gtest/gtest.h>

#include "hybridnet/report.hpp"

using namespace hybridnet;

namespace {

ArchConfig preset(const std::string& name) {
    return load_config(std::string(HYBRIDNET_PRESET_DIR) + "/" + name + ".json");
}

} // namespace

TEST(Report, JsonSchemaAndTotals) {
    const auto cfg = preset("resnet20-cifar-hybrid-a");
    const auto r = network_cost(build(cfg));
    const auto j = to_json(r, table_row(cfg));
    EXPECT_EQ(j["schema_version"], kReportSchemaVersion);
    EXPECT_EQ(j["network"], "resnet20-cifar-hybrid-a");
    ASSERT_EQ(j["layers"].size(), r.per_layer.size());
    double e = 0;
    std::uint64_t s = 0;
    for (const auto& l : j["layers"]) {
        for (const char* key : {"label", "index", "residual", "counts", "energy_pj", "storage_bits"})
            EXPECT_TRUE(l.contains(key)) << key;
        e += l["energy_pj"].get<double>();
        s += l["storage_bits"].get<std::uint64_t>();
    }
    EXPECT_DOUBLE_EQ(j["total_energy_pj"].get<double>(), e);
    EXPECT_EQ(j["total_storage_bits"].get<std::uint64_t>(), s);
    for (const char* key : {"ee_fp", "ee_xnor", "mc_fp", "mc_xnor"}) EXPECT_TRUE(j["ratios"].contains(key)) << key;
    EXPECT_FALSE(to_json(r).contains("ratios"));
}

TEST(Report, CsvHeaderAndRows) {
    const auto r = network_cost(build(preset("vgg19-cifar-xnor")));
    std::istringstream in(to_csv(r));
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "# schema_version=1");
    std::getline(in, line);
    EXPECT_EQ(line.rfind("layer,", 0), 0u);
    std::size_t rows = 0;
    std::string last;
    while (std::getline(in, line)) ++rows, last = line;
    EXPECT_EQ(rows, r.per_layer.size() + 1);
    EXPECT_EQ(last.rfind("total", 0), 0u);
    EXPECT_NE(last.find(std::to_string(r.total_storage_bits)), std::string::npos);
}

TEST(Report, RatioTableFormat) {
    const TableRow row{"net", {24.126, 1.0}, {1.0, 0.999}};
    const auto t = ratio_table({row});
    EXPECT_NE(t.find("E.E (FP)"), std::string::npos);
    EXPECT_NE(t.find("M.C (XNOR)"), std::string::npos);
    std::istringstream in(t);
    std::string header, line;
    std::getline(in, header);
    std::getline(in, line);
    std::istringstream cells(line);
    std::vector<std::string> got;
    for (std::string c; cells >> c;) got.push_back(c);
    EXPECT_EQ(got, (std::vector<std::string>{"net", "24.13", "1.00", "1.00", "1.00"}));
    // Columns line up with the header.
    EXPECT_EQ(line.find("24.13"), header.find("E.E (FP)"));
}

TEST(Report, FixedRounding) {
    EXPECT_EQ(fixed(2.675, 1), "2.7");
    EXPECT_EQ(fixed(0, 2), "0.00");
    EXPECT_EQ(fixed(-1.5, 0), "-2");
}
