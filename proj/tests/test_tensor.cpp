#include "dyncap/tensor.hpp"

#include <limits>
#include <stdexcept>

#include "doctest.h"

using dyncap::Tensor;

TEST_CASE("tensor construction and accessors") {
    Tensor t({2, 3});
    CHECK(t.rank() == 2);
    CHECK(t.numel() == 6);
    CHECK(t.dim(0) == 2);
    CHECK(t.dim(1) == 3);
    for (std::size_t i = 0; i < 6; ++i) CHECK(t[i] == 0.0);

    Tensor u({2, 2}, {1.0, 2.0, 3.0, 4.0});
    CHECK(u.at(0, 1) == 2.0);
    CHECK(u.at(1, 0) == 3.0);
    u.at(1, 1) = 9.0;
    CHECK(u[3] == 9.0);
}

TEST_CASE("scalar helpers") {
    Tensor s = Tensor::scalar(2.5);
    CHECK(s.is_scalar());
    CHECK(s.item() == 2.5);
    CHECK(s.rank() == 1);

    Tensor f = Tensor::full({3}, -1.0);
    CHECK(f.numel() == 3);
    CHECK(f[2] == -1.0);
    CHECK_FALSE(f.is_scalar());
    CHECK_THROWS_AS((void)f.item(), std::invalid_argument);
}

TEST_CASE("shape validation") {
    CHECK_THROWS_AS(Tensor({2, 0}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor(std::vector<std::size_t>{}), std::invalid_argument);
}

TEST_CASE("shape_string formats dims") {
    CHECK(dyncap::shape_string({2, 3}) == "(2,3)");
    CHECK(dyncap::shape_string({7}) == "(7)");
}

TEST_CASE("all_finite flags nan and inf") {
    Tensor t({2}, {1.0, 2.0});
    CHECK(t.all_finite());
    t[1] = std::numeric_limits<double>::quiet_NaN();
    CHECK_FALSE(t.all_finite());
    t[1] = std::numeric_limits<double>::infinity();
    CHECK_FALSE(t.all_finite());
}
