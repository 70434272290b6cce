#include "disbench/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "disbench/errors.hpp"

namespace disbench {

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw ShapeMismatch("auroc: scores and labels must match and be non-empty");
    const size_t n = scores.size();
    size_t n1 = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) throw InvalidInput("auroc: labels must be binary");
        n1 += static_cast<size_t>(y);
    }
    const size_t n0 = n - n1;
    if (n0 == 0 || n1 == 0) throw UndefinedMetric("auroc: needs both classes");

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    // midranks over tie blocks; ranks are half-integers, sums stay exact
    std::vector<double> rank(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double mid = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (size_t k = i; k < j; ++k) rank[order[k]] = mid;
        i = j;
    }
    double rank_sum_pos = 0.0;
    for (size_t s = 0; s < n; ++s)
        if (labels[s] == 1) rank_sum_pos += rank[s];
    const double u = rank_sum_pos - static_cast<double>(n1) * (static_cast<double>(n1) + 1.0) / 2.0;
    return u / (static_cast<double>(n0) * static_cast<double>(n1));
}

double knn_accuracy(const Mat& train_z, const std::vector<int>& train_y, const Mat& test_z,
                    const std::vector<int>& test_y, int k) {
    if (k < 1) throw InvalidInput("knn: k must be >= 1");
    if (train_z.rows < k) throw InvalidInput("knn: training set smaller than k");
    if (train_z.cols != test_z.cols) throw ShapeMismatch("knn: latent widths differ");
    if (static_cast<int>(train_y.size()) != train_z.rows ||
        static_cast<int>(test_y.size()) != test_z.rows)
        throw ShapeMismatch("knn: label counts mismatch");

    size_t correct = 0;
    std::vector<std::pair<double, int>> dist(static_cast<size_t>(train_z.rows));
    for (int t = 0; t < test_z.rows; ++t) {
        for (int i = 0; i < train_z.rows; ++i) {
            double acc = 0.0;
            for (int c = 0; c < train_z.cols; ++c) acc += sq(train_z.at(i, c) - test_z.at(t, c));
            dist[static_cast<size_t>(i)] = {acc, i};
        }
        std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
        int votes1 = 0;
        for (int j = 0; j < k; ++j)
            votes1 += train_y[static_cast<size_t>(dist[static_cast<size_t>(j)].second)];
        const int pred = votes1 * 2 > k ? 1 : 0;  // vote ties go to label 0
        if (pred == test_y[static_cast<size_t>(t)]) ++correct;
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(test_z.rows);
}

namespace {

Mat take_cols(const Mat& z, int from, int width) {
    Mat out(z.rows, width);
    for (int i = 0; i < z.rows; ++i)
        for (int c = 0; c < width; ++c) out.at(i, c) = z.at(i, from + c);
    return out;
}

}  // namespace

ConfusionMatrix2x2 subspace_confusion(const Mat& train_z, const std::vector<int>& train_y1,
                                      const std::vector<int>& train_y2, const Mat& test_z,
                                      const std::vector<int>& test_y1,
                                      const std::vector<int>& test_y2, int d1, int d2,
                                      bool shared, int k) {
    ConfusionMatrix2x2 cm;
    cm.shared = shared;
    if (shared) {
        cm.entries[0] = knn_accuracy(train_z, train_y1, test_z, test_y1, k);
        cm.entries[1] = knn_accuracy(train_z, train_y2, test_z, test_y2, k);
        return cm;
    }
    if (train_z.cols != d1 + d2) throw ShapeMismatch("subspace_confusion: latent width mismatch");
    const Mat tr1 = take_cols(train_z, 0, d1), tr2 = take_cols(train_z, d1, d2);
    const Mat te1 = take_cols(test_z, 0, d1), te2 = take_cols(test_z, d1, d2);
    cm.entries[0] = knn_accuracy(tr1, train_y1, te1, test_y1, k);
    cm.entries[1] = knn_accuracy(tr1, train_y2, te1, test_y2, k);
    cm.entries[2] = knn_accuracy(tr2, train_y1, te2, test_y1, k);
    cm.entries[3] = knn_accuracy(tr2, train_y2, te2, test_y2, k);
    return cm;
}

double diagonal_dominance(const ConfusionMatrix2x2& cm) {
    if (cm.shared)
        throw UndefinedMetric("diagonal_dominance: undefined for shared-latent matrices");
    const double diag = std::fabs(cm.entries[0] - 50.0) + std::fabs(cm.entries[3] - 50.0);
    const double off = std::fabs(cm.entries[1] - 50.0) + std::fabs(cm.entries[2] - 50.0);
    const double denom = diag + off;
    if (denom == 0.0) return 0.5;
    return diag / denom;
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

}  // namespace

void scatter_export(const Mat& z1, const std::vector<int>& labels, const std::string& base_path) {
    if (z1.cols != 2) throw InvalidInput("scatter_export: latents must be 2-dimensional");
    if (static_cast<int>(labels.size()) != z1.rows)
        throw ShapeMismatch("scatter_export: label count mismatch");

    std::ofstream csv(base_path + ".csv", std::ios::binary);
    csv << "x,y,label\n";
    for (int i = 0; i < z1.rows; ++i)
        csv << fmt(z1.at(i, 0)) << ',' << fmt(z1.at(i, 1)) << ','
            << labels[static_cast<size_t>(i)] << '\n';
    csv.close();

    constexpr double canvas = 600.0;
    double xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;
    if (z1.rows > 0) {
        xmin = xmax = z1.at(0, 0);
        ymin = ymax = z1.at(0, 1);
        for (int i = 1; i < z1.rows; ++i) {
            xmin = std::min(xmin, z1.at(i, 0));
            xmax = std::max(xmax, z1.at(i, 0));
            ymin = std::min(ymin, z1.at(i, 1));
            ymax = std::max(ymax, z1.at(i, 1));
        }
    }
    double xspan = xmax - xmin, yspan = ymax - ymin;
    if (xspan <= 0.0) xspan = 1.0;
    if (yspan <= 0.0) yspan = 1.0;
    const double margin = 0.05;
    xmin -= margin * xspan;
    ymin -= margin * yspan;
    xspan *= 1.0 + 2.0 * margin;
    yspan *= 1.0 + 2.0 * margin;

    std::ofstream svg(base_path + ".svg", std::ios::binary);
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"600\" height=\"600\" "
           "viewBox=\"0 0 600 600\">\n";
    svg << "<rect x=\"0\" y=\"0\" width=\"600\" height=\"600\" fill=\"white\" "
           "stroke=\"#444444\"/>\n";
    for (int i = 0; i < z1.rows; ++i) {
        const double px = (z1.at(i, 0) - xmin) / xspan * canvas;
        const double py = canvas - (z1.at(i, 1) - ymin) / yspan * canvas;  // y grows upward
        const char* color = labels[static_cast<size_t>(i)] == 0 ? "#1f77b4" : "#d62728";
        svg << "<circle cx=\"" << fmt(px) << "\" cy=\"" << fmt(py) << "\" r=\"3\" fill=\"" << color
            << "\" fill-opacity=\"0.7\"/>\n";
    }
    svg << "</svg>\n";
}

}  // namespace disbench
