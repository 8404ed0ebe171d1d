#include "sigil/instrumentation.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

namespace sigil {

std::vector<AsaRow> asa_accumulate(const std::vector<AttentionTrace>& traces, AsaGroupBy group_by) {
    bool any = false;
    for (auto& tr : traces) {
        any = any || !tr.records.empty();
    }
    if (!any) {
        throw std::invalid_argument("asa_accumulate: empty trace set");
    }
    struct Acc {
        std::string name;
        double sub = 0, sub_r = 0, sub_b = 0;
        int64_t q = 0, q_r = 0, q_b = 0;
    };
    std::map<std::pair<int, int>, Acc> acc;  // (site_index, t or -1)
    for (auto& tr : traces) {
        for (auto& r : tr.records) {
            int tkey = group_by == AsaGroupBy::layer ? -1 : r.t;
            auto& a  = acc[{r.site_index, tkey}];
            a.name   = r.site_name;
            a.sub += r.subject_mass * (double)r.n_queries;
            a.q += r.n_queries;
            a.sub_r += r.subject_mass_region * (double)r.n_region_queries;
            a.q_r += r.n_region_queries;
            a.sub_b += r.subject_mass_background * (double)r.n_background_queries;
            a.q_b += r.n_background_queries;
        }
    }
    std::vector<AsaRow> rows;
    for (auto& [key, a] : acc) {
        AsaRow row;
        row.site_index     = key.first;
        row.t              = key.second;
        row.site_name      = a.name;
        row.subject_sum    = a.sub;
        row.query_sum      = a.q;
        row.asa            = a.q > 0 ? a.sub / (double)a.q : 0.0;
        row.asa_region     = a.q_r > 0 ? a.sub_r / (double)a.q_r : 0.0;
        row.asa_background = a.q_b > 0 ? a.sub_b / (double)a.q_b : 0.0;
        rows.push_back(row);
    }
    return rows;
}

std::vector<SldRow> sld_compute(const std::vector<AttentionTrace>& traces) {
    std::map<int, SldRow> acc;
    std::map<int, double> sums;
    for (auto& tr : traces) {
        for (auto& r : tr.records) {
            auto& row      = acc[r.site_index];
            row.site_index = r.site_index;
            row.site_name  = r.site_name;
            if (r.delivered) {
                sums[r.site_index] += std::abs(r.mean_subject_hidden - r.mean_gen_hidden);
                row.samples++;
            }
        }
    }
    std::vector<SldRow> rows;
    for (auto& [site, row] : acc) {
        if (row.samples > 0) {
            row.sld = sums[site] / (double)row.samples;
        }
        rows.push_back(row);
    }
    return rows;
}

void write_trace_csv(const std::string& path, const std::vector<AttentionTrace>& traces, const std::string& system_name) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path);
    }
    out << "system,site_index,site_name,t,delivered,n_queries,subject_mass,gen_mass,"
           "subject_mass_region,subject_mass_background,mean_gen_hidden,mean_subject_hidden\n";
    for (auto& tr : traces) {
        for (auto& r : tr.records) {
            out << system_name << ',' << r.site_index << ',' << r.site_name << ',' << r.t << ','
                << (r.delivered ? 1 : 0) << ',' << r.n_queries << ',' << r.subject_mass << ','
                << r.gen_mass << ',' << r.subject_mass_region << ',' << r.subject_mass_background
                << ',' << r.mean_gen_hidden << ',' << r.mean_subject_hidden << '\n';
        }
    }
}

void write_asa_csv(const std::string& path, const std::vector<AsaRow>& rows, const std::string& system_name) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path);
    }
    out << "system,site_index,site_name,t,asa,asa_region,asa_background,subject_sum,query_sum\n";
    for (auto& r : rows) {
        out << system_name << ',' << r.site_index << ',' << r.site_name << ',' << r.t << ',' << r.asa
            << ',' << r.asa_region << ',' << r.asa_background << ',' << r.subject_sum << ','
            << r.query_sum << '\n';
    }
}

}  // namespace sigil
