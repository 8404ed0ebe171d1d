#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace sigil {

// One generate-pass attention record per delivery site. Masses are
// row-normalized and averaged over queries with equal weight.
struct SiteTraceRecord {
    int site_index = -1;  // delivery-slot order
    std::string site_name;
    int t          = -1;
    bool delivered = false;
    int64_t n_queries = 0;
    double subject_mass = 0.0;
    double gen_mass     = 1.0;
    int64_t n_region_queries     = 0;
    int64_t n_background_queries = 0;
    double subject_mass_region     = 0.0;
    double subject_mass_background = 0.0;
    double mean_gen_hidden     = 0.0;
    double mean_subject_hidden = 0.0;  // valid only when delivered
};

struct AttentionTrace {
    std::vector<SiteTraceRecord> records;
};

enum class AsaGroupBy { layer, layer_and_step };

struct AsaRow {
    int site_index = -1;
    std::string site_name;
    int t = -1;  // -1 for layer-only grouping
    double asa            = 0.0;
    double asa_region     = 0.0;  // customized-region queries
    double asa_background = 0.0;  // background queries
    double subject_sum    = 0.0;  // raw numerator, accumulated mass
    int64_t query_sum     = 0;    // raw denominator, accumulated queries
};

// ASA: accumulated subject attention mass over accumulated total mass,
// aggregated per site or per (site, step).
std::vector<AsaRow> asa_accumulate(const std::vector<AttentionTrace>& traces, AsaGroupBy group_by);

struct SldRow {
    int site_index = -1;
    std::string site_name;
    std::optional<double> sld;  // absent when the site was never delivered
    int64_t samples = 0;
};

// SLD per site: |mean(subject hidden) - mean(gen hidden)|, averaged over the
// delivered records at that site.
std::vector<SldRow> sld_compute(const std::vector<AttentionTrace>& traces);

void write_trace_csv(const std::string& path, const std::vector<AttentionTrace>& traces, const std::string& system_name);
void write_asa_csv(const std::string& path, const std::vector<AsaRow>& rows, const std::string& system_name);

}  // namespace sigil
