/*
 * Copyright 2026 The regioncap Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
// Generated by tests/oracles/generate_oracles.py. Do not edit.
#pragma once
#include <vector>
namespace oracle {
inline const std::vector<double> kLabRed = {53.2405879437449, 80.0923082256922, 67.2027510444287};
inline const std::vector<double> kLabGreen = {87.73509948831895, -86.18302974439501, 83.17970317538452};
inline const std::vector<double> kLabBlue = {32.29567256501351, 79.18559091176556, -107.85730020669489};
inline const std::vector<double> kLabBrown = {34.72479591236425, 24.9995677303827, 31.372839725488376};
inline const std::vector<double> kAttentionHead = {-0.049095968933818984, 0.5012914729516871, -0.183366711118577, 0.3094761269734615};
inline const std::vector<double> kEncoderLayer = {-0.2903953985149474, 0.49012722858283575, 0.2661872845198544, 0.4676511417561847, -0.2309165300207902, 0.5067562582351852, 0.39338946550515197, 0.4492886639311988};
inline const std::vector<double> kDecoderLogitsBos = {-0.09552755459978406, 0.725994497562253, 0.4839329099713823, -0.4670915244617931, -0.7338257812793835};
inline const std::vector<double> kDecoderLogitsTwo = {-0.2726943177917155, 0.8052059401723873, 0.7034776093870636, -0.4288470672230642, -0.9329097856695787};
inline const std::vector<double> kDecoderLogitsNoLayers = {-0.6690826943192103, 0.9746241930117563, 1.19050435427887, -0.33770715252762606, -1.3711768897174368};
inline const std::vector<double> kAdamTwoSteps = {0.37336630271867566, -0.8599781433169098};
inline const std::vector<double> kCiderThreeImage = {2.080205555472056, 4.851769411013523, 1.4461583903070014};
inline const std::vector<double> kCiderDThreeImage = {2.0696049382750585, 4.851769411013523, 1.4461583903070014};
}  // namespace oracle
