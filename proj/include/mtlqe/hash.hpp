// SPDX-License-Identifier: Apache-2.0

#ifndef MTLQE_HASH_HPP_
#define MTLQE_HASH_HPP_

#include <string>
#include <string_view>

namespace mtlqe {

// Lower-case hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);

}  // namespace mtlqe

#endif  // MTLQE_HASH_HPP_
